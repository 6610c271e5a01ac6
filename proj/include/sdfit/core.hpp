#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sdfit {

// ---------------------------------------------------------------- errors

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration / file input.
struct ConfigError : Error {
    using Error::Error;
};

/// A numeric computation produced a non-finite or otherwise invalid value.
struct NumericError : Error {
    using Error::Error;
};

struct SeamAmbiguity : NumericError {
    using NumericError::NumericError;
};
struct EmptyScan : NumericError {
    using NumericError::NumericError;
};
struct EmptyPool : NumericError {
    using NumericError::NumericError;
};
struct EmptyMesh : NumericError {
    using NumericError::NumericError;
};
struct CellBoundary : NumericError {
    using NumericError::NumericError;
};
struct NonFiniteValue : NumericError {
    using NumericError::NumericError;
};
struct SpecMismatch : ConfigError {
    using ConfigError::ConfigError;
};
struct NoValidPixels : NumericError {
    using NumericError::NumericError;
};

// ---------------------------------------------------------------- vectors

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return (&x)[i]; }
    double operator[](int i) const { return (&x)[i]; }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    return n > 0.0 ? v / n : Vec3{0, 0, 0};
}
inline Vec3 cwise_min(const Vec3& a, const Vec3& b) {
    return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 cwise_max(const Vec3& a, const Vec3& b) {
    return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

/// Row-major 3x3 matrix; used for rigid rotations.
struct Mat3 {
    std::array<double, 9> m = {1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }
};

/// Unit quaternion (w, x, y, z) to rotation matrix. Normalizes the input.
Mat3 quat_to_mat(double w, double x, double y, double z);

/// Rigid transform: world = rotation * local + translation.
struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;

    Vec3 to_world(const Vec3& local) const { return rotation * local + translation; }
    Vec3 to_local(const Vec3& world) const { return rotation.transposed() * (world - translation); }
};

// ---------------------------------------------------------------- boxes & grids

struct Bounds {
    Vec3 lo, hi;

    Vec3 extent() const { return hi - lo; }
    bool contains(const Vec3& p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
    }
    void validate() const {
        if (!(hi.x > lo.x && hi.y > lo.y && hi.z > lo.z))
            throw ConfigError("bounds must have positive extent on every axis");
    }
};

/// Axis-aligned uniform grid. `dims` counts voxels for occupancy grids and
/// nodes for feature/sampling grids; helpers below cover both readings.
struct GridSpec {
    Vec3 origin;
    double voxel_size = 0.0;
    std::array<int, 3> dims = {0, 0, 0};

    std::int64_t cell_count() const {
        return std::int64_t(dims[0]) * dims[1] * dims[2];
    }
    std::int64_t flat_index(int i, int j, int k) const {
        return (std::int64_t(i) * dims[1] + j) * dims[2] + k;
    }
    std::array<int, 3> unflatten(std::int64_t idx) const {
        int k = int(idx % dims[2]);
        std::int64_t t = idx / dims[2];
        return {int(t / dims[1]), int(t % dims[1]), k};
    }
    Vec3 voxel_center(int i, int j, int k) const {
        return origin + Vec3{(i + 0.5) * voxel_size, (j + 0.5) * voxel_size, (k + 0.5) * voxel_size};
    }
    Vec3 node_position(int i, int j, int k) const {
        return origin + Vec3{i * voxel_size, j * voxel_size, k * voxel_size};
    }
    /// Box covered when dims counts voxels (cells).
    Bounds cell_box() const {
        return {origin, origin + Vec3{dims[0] * voxel_size, dims[1] * voxel_size, dims[2] * voxel_size}};
    }
    /// Box covered when dims counts nodes; trilinear interpolation is defined here.
    Bounds node_box() const {
        return {origin, origin + Vec3{(dims[0] - 1) * voxel_size, (dims[1] - 1) * voxel_size,
                                      (dims[2] - 1) * voxel_size}};
    }
    void validate() const {
        if (voxel_size <= 0.0) throw ConfigError("grid voxel_size must be positive");
        if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1) throw ConfigError("grid dims must all be >= 1");
    }
    bool operator==(const GridSpec& o) const {
        return origin == o.origin && voxel_size == o.voxel_size && dims == o.dims;
    }
};

// ---------------------------------------------------------------- rng

/// xoshiro256++ with splitmix64 seeding. The 4-word state serializes into
/// checkpoints, and every draw is reproducible across platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) { reseed(seed); }
    Rng(std::uint64_t seed, std::uint64_t stream) { reseed(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1))); }

    void reseed(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    /// Uniform in (0, 1].
    double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal(double mean = 0.0, double stddev = 1.0);
    /// Uniformly distributed unit vector.
    Vec3 unit_vector();
    Vec3 point_in(const Bounds& b) {
        return {uniform(b.lo.x, b.hi.x), uniform(b.lo.y, b.hi.y), uniform(b.lo.z, b.hi.z)};
    }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

  private:
    std::array<std::uint64_t, 4> state_ = {};
};

// ---------------------------------------------------------------- misc

inline bool all_finite(const double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(v[i])) return false;
    return true;
}

/// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
    double hi = std::max(a, b), lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

/// Shortest decimal string that round-trips the double exactly.
std::string format_double(double v);

}  // namespace sdfit
