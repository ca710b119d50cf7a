#pragma once

#include "cavity/volume.hpp"

namespace cavity {

enum class SmoothReduction { Sum, MeanPerVoxel };

// Sum of squared forward differences along x, y and z. Differences that
// would cross the far face are omitted.
double smooth_loss(const Volume& delta, SmoothReduction reduction = SmoothReduction::Sum);

Volume smooth_loss_grad(const Volume& delta, SmoothReduction reduction = SmoothReduction::Sum);

}  // namespace cavity
