#pragma once

// Marching cubes case tables (Lorensen & Cline layout, 256 cases).
// Corner c of a cell sets bit c when its value is <= the iso level; the
// triangle table then lists edge indices in groups of three, -1 terminated.

namespace sdfit::mc {

extern const signed char kTriTable[256][16];
extern const int kEdgeVertex[12][2];
extern const int kCornerOffset[8][3];

}  // namespace sdfit::mc
