#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "enfode/enf.hpp"
#include "enfode/latent_ode.hpp"
#include "enfode/pde_data.hpp"

namespace enfode {

struct TrainConfig {
  int inner_steps = 3;
  double inner_rate_pose = 1.0;     // Meta-SGD initial rate for poses
  double inner_rate_context = 5.0;  // and for contexts
  double outer_lr_enf = 1e-4;
  double outer_lr_ode = 1e-3;
  double outer_lr_rates = 1e-3;
  int batch_size = 8;
  int epochs = 100;
  int t_in = 10;
  int t_out = 10;
  bool first_order = true;  // stop gradients at inner-loop gradient tensors
  uint64_t seed = 0;
  /// Coordinates sampled per supervised frame during training (0 = all).
  int coord_samples = 0;
  /// Coordinates sampled for the inner fit during training (0 = all).
  int inner_coord_samples = 0;
};

/// Everything a checkpoint holds: configs plus one ParamStore carrying
/// enf.*, ode.* and the learnable Meta-SGD rates meta.rate_pose /
/// meta.rate_context (clamped positive after each outer step).
struct ModelBundle {
  EnfConfig enf;
  OdeConfig ode;
  TrainConfig train;
  ParamStore params;
};

ModelBundle make_model(const EnfConfig& enf, const OdeConfig& ode, const TrainConfig& train);

/// Dataset staged against the model geometry. For NoSym ablations the
/// data coordinates are re-tagged as raw vectors; otherwise geometries
/// must match.
struct StagedData {
  geom::CoordBatch coords;
  const Dataset* ds = nullptr;
};
StagedData stage_dataset(const Dataset& ds, geom::GeometryId model_geom);

struct InnerFitResult {
  LatentVar z0;
  std::vector<double> losses;  // reconstruction loss at each gradient step
};

/// Alg.-style initial-latent fit: inner_steps SGD updates of poses and
/// contexts on the frame-0 reconstruction MSE, starting from the shared
/// init_latent. With first_order=false the inner gradients stay on the
/// tape, so the outer backward differentiates through them.
InnerFitResult inner_fit(Tape& t, const EnfVars& ev, const EnfConfig& cfg, Value rate_pose,
                         Value rate_ctx, const geom::CoordBatch& coords0, const Tensor& values0,
                         bool first_order, int inner_steps);

struct RolloutResult {
  Value loss;
  std::vector<double> inner_losses;
};

/// Joint objective for one trajectory: inner fit on frame 0, unroll the
/// latent ODE, mean squared reconstruction error over frames 0..t_in-1.
/// Coordinate subsets, when given, pick the supervision points per frame.
RolloutResult rollout_loss(Tape& t, const EnfVars& ev, const OdeVars& ov, const ModelBundle& mb,
                           Value rate_pose, Value rate_ctx, const StagedData& data,
                           int64_t trajectory, const std::vector<int64_t>* mask0,
                           const std::vector<std::vector<int64_t>>* frame_coord_subsets,
                           const std::vector<int64_t>* inner_coord_subset);

struct MetricsRecord {
  std::string split;   // train | test
  std::string window;  // t_in | t_out | epoch
  double obs_rate = 1.0;
  double mse = 0.0;
  int64_t epoch = -1;
  double seconds = 0.0;
};
using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Epoch loop with seeded shuffling, fixed-order gradient accumulation
/// and an Adam outer step per batch (per-group learning rates). Mutates
/// the bundle parameters in place; emits one record per epoch.
void train(ModelBundle& mb, const Dataset& train_ds, const MetricsSink& sink);

struct EvalResult {
  double t_in_mse = 0.0;
  double t_out_mse = 0.0;
  std::vector<std::vector<double>> inner_losses;  // per trajectory
};

/// Fits frame 0 only (honoring any frame-0 observation mask on the
/// dataset), integrates through t_in + t_out frames and reports the two
/// window MSEs over full frames.
EvalResult evaluate(const ModelBundle& mb, const Dataset& ds, int t_in, int t_out);

/// Mean over the latent index of the contexts after inner fit + rollout:
/// one invariant c-dim row per (trajectory, frame).
struct LatentRow {
  int64_t trajectory = 0;
  int64_t frame = 0;
  std::vector<double> context_mean;
};
std::vector<LatentRow> export_latents(const ModelBundle& mb, const Dataset& ds, int frames);

// -- checkpoint io ------------------------------------------------------------
// "ENFCKPT1" magic, u32 header length, JSON header (configs + parameter
// table with shapes/offsets), then the parameter blobs as little-endian
// f64 in header order. Writes are atomic (tmp file + rename).

void save_checkpoint(const ModelBundle& mb, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

std::string bundle_config_json(const ModelBundle& mb);  // pretty config echo
ModelBundle bundle_from_config_json(const std::string& text);

}  // namespace enfode
