#include "enfode/meta_train.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace enfode {

namespace {

enum StreamId : uint64_t { kShuffleStream = 11, kCoordStream = 12 };

Tensor rows_subset(const Tensor& values, int64_t frame, const std::vector<int64_t>* idx,
                   int64_t m, int64_t c) {
  if (!idx) {
    Tensor out(Shape{m, c});
    std::copy(values.data.begin() + frame * m * c, values.data.begin() + (frame + 1) * m * c,
              out.data.begin());
    return out;
  }
  Tensor out(Shape{static_cast<int64_t>(idx->size()), c});
  for (size_t r = 0; r < idx->size(); ++r)
    for (int64_t ch = 0; ch < c; ++ch)
      out.data[r * static_cast<size_t>(c) + static_cast<size_t>(ch)] =
          values.data[static_cast<size_t>((frame * m + (*idx)[r]) * c + ch)];
  return out;
}

std::vector<int64_t> sample_indices(int64_t m, int64_t count, Rng& rng) {
  std::vector<int64_t> idx(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < count; ++i) {
    const int64_t j = i + rng.uniform_int(m - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

ModelBundle make_model(const EnfConfig& enf, const OdeConfig& ode, const TrainConfig& train) {
  ModelBundle mb;
  mb.enf = enf;
  mb.ode = ode;
  mb.train = train;
  Rng rng = Rng::stream(train.seed, {101});
  register_enf_params(mb.params, enf, rng);
  register_ode_params(mb.params, ode, enf.geometry, enf.context_dim, rng);
  mb.params.add("meta.rate_pose", Tensor::scalar(train.inner_rate_pose));
  mb.params.add("meta.rate_context", Tensor::scalar(train.inner_rate_context));
  return mb;
}

StagedData stage_dataset(const Dataset& ds, geom::GeometryId model_geom) {
  StagedData out;
  out.ds = &ds;
  auto coords = ds.coordinates();
  if (model_geom == ds.header.geometry) {
    out.coords = geom::make_coord_batch(model_geom, coords);
    return out;
  }
  if (model_geom.tag == geom::Tag::NoSym) {
    std::vector<geom::Coordinate> raw;
    raw.reserve(coords.size());
    for (const auto& x : coords) raw.push_back(geom::make_coordinate(model_geom, x.x));
    out.coords = geom::make_coord_batch(model_geom, raw);
    return out;
  }
  throw std::invalid_argument("stage_dataset: model geometry " + geom::geometry_name(model_geom) +
                              " does not match dataset geometry " +
                              geom::geometry_name(ds.header.geometry));
}

InnerFitResult inner_fit(Tape& t, const EnfVars& ev, const EnfConfig& cfg, Value rate_pose,
                         Value rate_ctx, const geom::CoordBatch& coords0, const Tensor& values0,
                         bool first_order, int inner_steps) {
  if (coords0.count() < 1) throw std::invalid_argument("inner_fit: empty frame");
  const LatentSet z_init = init_latent(cfg);
  Value pose_params = t.leaf(geom::pose_params_tensor(cfg.geometry, z_init.poses), true);
  Value contexts = t.leaf(z_init.contexts, true);
  Value target = t.constant(values0);

  InnerFitResult res;
  for (int step = 0; step < inner_steps; ++step) {
    Value state = geom::pose_state_from_params(t, cfg.geometry, pose_params);
    Value loss = t.mse(decode(t, ev, cfg, state, contexts, coords0), target);
    const double l = loss.scalar();
    if (!std::isfinite(l))
      throw std::runtime_error("inner_fit: non-finite loss at step " + std::to_string(step));
    res.losses.push_back(l);

    Value g_pose, g_ctx;
    if (first_order) {
      auto grads = t.backward_values(loss);
      auto fetch = [&](Value leaf) {
        auto it = grads.find(leaf.id());
        return t.constant(it != grads.end() ? it->second : Tensor(leaf.shape()));
      };
      g_pose = fetch(pose_params);
      g_ctx = fetch(contexts);
    } else {
      GradMap gm = t.backward(loss, /*create_graph=*/true);
      g_pose = gm.at_or_zero(pose_params, t);
      g_ctx = gm.at_or_zero(contexts, t);
    }
    pose_params = t.sub(pose_params, t.mul(rate_pose, g_pose));
    contexts = t.sub(contexts, t.mul(rate_ctx, g_ctx));
  }
  res.z0 = LatentVar{geom::pose_state_from_params(t, cfg.geometry, pose_params), contexts};
  return res;
}

RolloutResult rollout_loss(Tape& t, const EnfVars& ev, const OdeVars& ov, const ModelBundle& mb,
                           Value rate_pose, Value rate_ctx, const StagedData& data,
                           int64_t trajectory, const std::vector<int64_t>* mask0,
                           const std::vector<std::vector<int64_t>>* frame_coord_subsets,
                           const std::vector<int64_t>* inner_coord_subset) {
  const Dataset& ds = *data.ds;
  const int t_in = mb.train.t_in;
  if (ds.header.frames < t_in)
    throw std::invalid_argument("rollout_loss: trajectory has fewer frames than t_in");
  const Tensor& values = ds.values[static_cast<size_t>(trajectory)];
  const int64_t m = ds.points(), c = ds.header.channels;

  // inner fit on frame 0 only (observation mask, then optional thinning)
  const std::vector<int64_t>* inner_idx = mask0 ? mask0 : inner_coord_subset;
  geom::CoordBatch inner_coords =
      inner_idx ? geom::coord_batch_subset(data.coords, *inner_idx) : data.coords;
  Tensor inner_values = rows_subset(values, 0, inner_idx, m, c);
  InnerFitResult fit = inner_fit(t, ev, mb.enf, rate_pose, rate_ctx, inner_coords, inner_values,
                                 mb.train.first_order, mb.train.inner_steps);

  auto frames = integrate(t, ov, mb.ode, mb.enf.geometry, fit.z0, t_in);

  Value total;
  for (int f = 0; f < t_in; ++f) {
    const std::vector<int64_t>* sub =
        frame_coord_subsets ? &(*frame_coord_subsets)[static_cast<size_t>(f)] : nullptr;
    geom::CoordBatch cb = sub ? geom::coord_batch_subset(data.coords, *sub) : data.coords;
    Value pred = decode(t, ev, mb.enf, frames[static_cast<size_t>(f)].pose_state,
                        frames[static_cast<size_t>(f)].contexts, cb);
    Value frame_loss = t.mse(pred, t.constant(rows_subset(values, f, sub, m, c)));
    total = f == 0 ? frame_loss : t.add(total, frame_loss);
  }
  return RolloutResult{t.mul_scalar(total, 1.0 / t_in), std::move(fit.losses)};
}

void train(ModelBundle& mb, const Dataset& train_ds, const MetricsSink& sink) {
  if (train_ds.header.trajectories < 1) throw std::invalid_argument("train: empty dataset");
  if (train_ds.header.frames < mb.train.t_in)
    throw std::invalid_argument("train: dataset frames < t_in");
  StagedData staged = stage_dataset(train_ds, mb.enf.geometry);
  const int64_t n_traj = train_ds.header.trajectories;
  const int64_t m = train_ds.points();
  Adam adam;
  auto lr_of = [&](const std::string& name) {
    if (name.rfind("enf.", 0) == 0) return mb.train.outer_lr_enf;
    if (name.rfind("ode.", 0) == 0) return mb.train.outer_lr_ode;
    return mb.train.outer_lr_rates;
  };
  const auto t_start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < mb.train.epochs; ++epoch) {
    // seeded shuffle, independent of prior epochs
    std::vector<int64_t> order(static_cast<size_t>(n_traj));
    for (int64_t i = 0; i < n_traj; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng = Rng::stream(mb.train.seed, {kShuffleStream, static_cast<uint64_t>(epoch)});
    for (int64_t i = n_traj - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n_traj; start += mb.train.batch_size) {
      const int64_t count = std::min<int64_t>(mb.train.batch_size, n_traj - start);
      NamedGrads accum;
      for (const auto& e : mb.params.entries())
        if (e.trainable) accum.emplace(e.name, Tensor(e.value.shape));
      double batch_loss = 0.0;

      for (int64_t k = 0; k < count; ++k) {
        const int64_t traj = order[static_cast<size_t>(start + k)];
        // per-visit coordinate subsets, seeded by position not thread
        std::optional<std::vector<std::vector<int64_t>>> subsets;
        std::optional<std::vector<int64_t>> inner_subset;
        if (mb.train.coord_samples > 0 && mb.train.coord_samples < m) {
          subsets.emplace();
          for (int f = 0; f < mb.train.t_in; ++f) {
            Rng r = Rng::stream(mb.train.seed,
                                {kCoordStream, static_cast<uint64_t>(epoch),
                                 static_cast<uint64_t>(start + k), static_cast<uint64_t>(f)});
            subsets->push_back(sample_indices(m, mb.train.coord_samples, r));
          }
        }
        if (mb.train.inner_coord_samples > 0 && mb.train.inner_coord_samples < m) {
          Rng r = Rng::stream(mb.train.seed, {kCoordStream, static_cast<uint64_t>(epoch),
                                              static_cast<uint64_t>(start + k), 1000001});
          inner_subset = sample_indices(m, mb.train.inner_coord_samples, r);
        }

        Tape tape;
        BoundParams bp(tape, mb.params, /*requires_grad=*/true);
        EnfVars ev = bind_enf(tape, bp);
        OdeVars ov = bind_ode(bp, mb.ode);
        RolloutResult rr = rollout_loss(tape, ev, ov, mb, bp.at("meta.rate_pose"),
                                        bp.at("meta.rate_context"), staged, traj, nullptr,
                                        subsets ? &*subsets : nullptr,
                                        inner_subset ? &*inner_subset : nullptr);
        const double l = rr.loss.scalar();
        if (!std::isfinite(l))
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", trajectory " + std::to_string(traj));
        batch_loss += l;
        auto grads = bp.named_grads(tape.backward_values(rr.loss));
        for (auto& [name, g] : grads) {
          auto it = accum.find(name);
          if (it == accum.end()) continue;  // fixed entries (RFF banks) take no step
          for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
        }
      }
      for (auto& [name, g] : accum)
        for (auto& v : g.data) v /= static_cast<double>(count);
      adam.step(mb.params, accum, lr_of);
      // Meta-SGD rates stay positive
      for (const char* rn : {"meta.rate_pose", "meta.rate_context"}) {
        double& v = mb.params.at(rn).data[0];
        if (v < 1e-6) v = 1e-6;
      }
      epoch_loss += batch_loss / static_cast<double>(count);
      ++batches;
    }
    MetricsRecord rec;
    rec.split = "train";
    rec.window = "epoch";
    rec.mse = epoch_loss / static_cast<double>(batches);
    rec.epoch = epoch;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (sink) sink(rec);
  }
}

EvalResult evaluate(const ModelBundle& mb, const Dataset& ds, int t_in, int t_out) {
  if (ds.header.frames < t_in + t_out)
    throw std::invalid_argument("evaluate: requested windows exceed available frames (" +
                                std::to_string(t_in + t_out) + " > " +
                                std::to_string(ds.header.frames) + ")");
  StagedData staged = stage_dataset(ds, mb.enf.geometry);
  const int64_t m = ds.points(), c = ds.header.channels;
  EvalResult res;
  double tin_acc = 0.0, tout_acc = 0.0;

  for (int64_t traj = 0; traj < ds.header.trajectories; ++traj) {
    Tape tape;
    BoundParams bp(tape, mb.params, /*requires_grad=*/false);
    EnfVars ev = bind_enf(tape, bp);
    OdeVars ov = bind_ode(bp, mb.ode);
    const Tensor& values = ds.values[static_cast<size_t>(traj)];

    const std::vector<int64_t>* mask =
        ds.masks.empty() ? nullptr : &ds.masks[static_cast<size_t>(traj)];
    geom::CoordBatch inner_coords = mask ? geom::coord_batch_subset(staged.coords, *mask)
                                         : staged.coords;
    InnerFitResult fit =
        inner_fit(tape, ev, mb.enf, bp.at("meta.rate_pose"), bp.at("meta.rate_context"),
                  inner_coords, rows_subset(values, 0, mask, m, c), /*first_order=*/true,
                  mb.train.inner_steps);
    res.inner_losses.push_back(fit.losses);

    auto frames = integrate(tape, ov, mb.ode, mb.enf.geometry, fit.z0, t_in + t_out);
    double tin = 0.0, tout = 0.0;
    for (int f = 0; f < t_in + t_out; ++f) {
      Value pred = decode(tape, ev, mb.enf, frames[static_cast<size_t>(f)].pose_state,
                          frames[static_cast<size_t>(f)].contexts, staged.coords);
      const Tensor target = rows_subset(values, f, nullptr, m, c);
      double mse = 0.0;
      const Tensor& p = pred.val();
      for (size_t i = 0; i < p.data.size(); ++i) {
        const double d = p.data[i] - target.data[i];
        mse += d * d;
      }
      mse /= static_cast<double>(p.data.size());
      (f < t_in ? tin : tout) += mse;
    }
    tin_acc += tin / t_in;
    if (t_out > 0) tout_acc += tout / t_out;
  }
  res.t_in_mse = tin_acc / static_cast<double>(ds.header.trajectories);
  res.t_out_mse = t_out > 0 ? tout_acc / static_cast<double>(ds.header.trajectories) : 0.0;
  return res;
}

std::vector<LatentRow> export_latents(const ModelBundle& mb, const Dataset& ds, int frames) {
  if (ds.header.frames < frames)
    throw std::invalid_argument("export_latents: dataset has fewer frames than requested");
  StagedData staged = stage_dataset(ds, mb.enf.geometry);
  const int64_t m = ds.points(), c = ds.header.channels;
  std::vector<LatentRow> rows;
  rows.reserve(static_cast<size_t>(ds.header.trajectories * frames));
  for (int64_t traj = 0; traj < ds.header.trajectories; ++traj) {
    Tape tape;
    BoundParams bp(tape, mb.params, false);
    EnfVars ev = bind_enf(tape, bp);
    OdeVars ov = bind_ode(bp, mb.ode);
    const Tensor& values = ds.values[static_cast<size_t>(traj)];
    InnerFitResult fit =
        inner_fit(tape, ev, mb.enf, bp.at("meta.rate_pose"), bp.at("meta.rate_context"),
                  staged.coords, rows_subset(values, 0, nullptr, m, c), true,
                  mb.train.inner_steps);
    auto traj_frames = integrate(tape, ov, mb.ode, mb.enf.geometry, fit.z0, frames);
    for (int f = 0; f < frames; ++f) {
      const Tensor& ctx = traj_frames[static_cast<size_t>(f)].contexts.val();
      LatentRow row;
      row.trajectory = traj;
      row.frame = f;
      row.context_mean.assign(static_cast<size_t>(ctx.shape[1]), 0.0);
      for (int64_t i = 0; i < ctx.shape[0]; ++i)
        for (int64_t k = 0; k < ctx.shape[1]; ++k)
          row.context_mean[static_cast<size_t>(k)] += ctx.at({i, k}) / ctx.shape[0];
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace enfode
