#pragma once

#include <vector>

#include "enfode/geometry_types.hpp"
#include "enfode/tensor.hpp"

namespace enfode {

/// One PDE state in latent form: N group-valued poses plus an (N, c)
/// matrix of invariant context vectors.
struct LatentSet {
  geom::GeometryId geometry;
  std::vector<geom::Pose> poses;
  Tensor contexts;  // (N, c)

  int64_t count() const { return static_cast<int64_t>(poses.size()); }
  int64_t context_dim() const { return contexts.shape.empty() ? 0 : contexts.shape[1]; }
};

}  // namespace enfode
