#include "enfode/enf.hpp"

#include <cmath>
#include <stdexcept>

namespace enfode {

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676656;

Tensor uniform_fan_in(Shape s, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(s));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_scaled(Shape s, double sigma, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = sigma * rng.normal();
  return t;
}

void add_linear(ParamStore& ps, const std::string& name, int64_t out, int64_t in, Rng& rng) {
  ps.add(name + "_w", uniform_fan_in({out, in}, in, rng));
  ps.add(name + "_b", uniform_fan_in({out}, in, rng));
}

}  // namespace

void register_enf_params(ParamStore& ps, const EnfConfig& cfg, Rng& rng) {
  const int64_t d = cfg.hidden_dim, c = cfg.context_dim, f = cfg.rff_features;
  const int64_t ad = geom::attr_dim(cfg.geometry);
  if (d % cfg.heads != 0)
    throw std::invalid_argument("EnfConfig: hidden_dim must be divisible by head count");
  add_linear(ps, "enf.in", d, c, rng);
  ps.add("enf.ln_g", Tensor(Shape{d}, 1.0));
  ps.add("enf.ln_b", Tensor(Shape{d}, 0.0));
  add_linear(ps, "enf.q", d, 2 * f, rng);
  add_linear(ps, "enf.k", d, d, rng);
  add_linear(ps, "enf.v", d, d, rng);
  add_linear(ps, "enf.va", d, 2 * f, rng);
  add_linear(ps, "enf.vb", d, 2 * f, rng);
  add_linear(ps, "enf.out1", d, d, rng);
  add_linear(ps, "enf.out2", d, d, rng);
  add_linear(ps, "enf.out3", cfg.out_channels, d, rng);
  // frequency banks are sampled once and never updated
  ps.add("enf.rff_q", normal_scaled({f, ad}, cfg.sigma_q, rng), /*trainable=*/false);
  ps.add("enf.rff_va", normal_scaled({f, ad}, cfg.sigma_va, rng), /*trainable=*/false);
  ps.add("enf.rff_vb", normal_scaled({f, ad}, cfg.sigma_vb, rng), /*trainable=*/false);
}

EnfVars bind_enf(Tape&, const BoundParams& bp) {
  EnfVars v;
  v.w_in = bp.at("enf.in_w");
  v.b_in = bp.at("enf.in_b");
  v.ln_g = bp.at("enf.ln_g");
  v.ln_b = bp.at("enf.ln_b");
  v.w_q = bp.at("enf.q_w");
  v.b_q = bp.at("enf.q_b");
  v.w_k = bp.at("enf.k_w");
  v.b_k = bp.at("enf.k_b");
  v.w_v = bp.at("enf.v_w");
  v.b_v = bp.at("enf.v_b");
  v.w_va = bp.at("enf.va_w");
  v.b_va = bp.at("enf.va_b");
  v.w_vb = bp.at("enf.vb_w");
  v.b_vb = bp.at("enf.vb_b");
  v.out1_w = bp.at("enf.out1_w");
  v.out1_b = bp.at("enf.out1_b");
  v.out2_w = bp.at("enf.out2_w");
  v.out2_b = bp.at("enf.out2_b");
  v.out3_w = bp.at("enf.out3_w");
  v.out3_b = bp.at("enf.out3_b");
  v.rff_q = bp.at("enf.rff_q");
  v.rff_va = bp.at("enf.rff_va");
  v.rff_vb = bp.at("enf.rff_vb");
  return v;
}

Value rff_embed(Tape& t, Value a, Value freq) {
  if (a.shape()[1] != freq.shape()[1])
    throw std::invalid_argument("rff_embed: attribute dim " + shape_str(a.shape()) +
                                " does not match frequency bank " + shape_str(freq.shape()));
  return t.cos_sin(t.mul_scalar(t.matmul_nt(a, freq), kTwoPi));
}

DecodeResult decode_full(Tape& t, const EnfVars& v, const EnfConfig& cfg, Value pose_state,
                         Value contexts, const geom::CoordBatch& coords) {
  if (!(coords.geom == cfg.geometry))
    throw std::invalid_argument("decode: coordinate geometry " + geom::geometry_name(coords.geom) +
                                " does not match model geometry " +
                                geom::geometry_name(cfg.geometry));
  const int64_t n = pose_state.shape()[0];
  const int64_t m = coords.count();
  const int64_t d = cfg.hidden_dim;
  const int64_t heads = cfg.heads;
  const int64_t dh = d / heads;

  // geometric inputs: attributes (M*N, ad) and window bias (M, N)
  Value attrs = geom::bi_invariant_batch(t, cfg.geometry, pose_state, coords);
  Value wdist = geom::window_distance_sq_batch(t, cfg.geometry, pose_state, coords);
  Value gbias = t.mul_scalar(wdist, -1.0 / (2.0 * cfg.sigma_att * cfg.sigma_att));

  // contexts -> projected, layer-normed C~ (N, d)
  Value ctx = t.layer_norm(t.linear(contexts, v.w_in, v.b_in), 1, v.ln_g, v.ln_b);
  Value keys = t.linear(ctx, v.w_k, v.b_k);  // (N, d)

  Value e_q = rff_embed(t, attrs, v.rff_q);  // (M*N, 2F)
  const int64_t ed = e_q.shape()[1];

  // values: projected contexts FiLM-modulated by attribute embeddings
  Value vc = geom::repeat_rows_inner(t, t.linear(ctx, v.w_v, v.b_v), m);  // (M*N, d)
  Value valpha = t.linear(rff_embed(t, attrs, v.rff_va), v.w_va, v.b_va);
  Value vbeta = t.linear(rff_embed(t, attrs, v.rff_vb), v.w_vb, v.b_vb);
  Value values = t.add(t.mul(vc, valpha), vbeta);

  DecodeResult res;
  // attention logits <W_q e_, k> factored against the N distinct keys:
  // <W_q e + b_q, k_i> = <e, W_q^T k_i> + <b_q, k_i>, so the query
  // projection never materializes per coordinate
  std::vector<Value> u_parts;
  u_parts.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    Value kh = t.slice(keys, 1, h * dh, dh);    // (N, dh)
    Value wq_h = t.slice(v.w_q, 0, h * dh, dh); // (dh, 2F)
    u_parts.push_back(t.reshape(t.matmul(kh, wq_h), Shape{n, 1, ed}));
  }
  Value u = t.concat(u_parts, 1);  // (N, H, 2F)
  Value bias_scores = t.sum(t.reshape(t.mul(keys, v.b_q), Shape{n, heads, dh}), 2);  // (N, H)
  Value e4 = t.broadcast_to(t.reshape(e_q, Shape{m, n, 1, ed}), Shape{m, n, heads, ed});
  Value u4 = t.broadcast_to(t.reshape(u, Shape{1, n, heads, ed}), Shape{m, n, heads, ed});
  Value scores = t.mul_scalar(
      t.add(t.sum(t.mul(e4, u4), 3), t.reshape(bias_scores, Shape{1, n, heads})),
      1.0 / std::sqrt(static_cast<double>(dh)));
  Value attn = t.softmax(t.add(scores, t.reshape(gbias, Shape{m, n, 1})), 1);
  for (int64_t h = 0; h < heads; ++h)
    res.attention.push_back(t.reshape(t.slice(attn, 2, h, 1), Shape{m, n}));
  Value weights = t.broadcast_to(t.reshape(attn, Shape{m, n, heads, 1}), Shape{m, n, heads, dh});
  Value mixed = t.sum(t.mul(weights, t.reshape(values, Shape{m, n, heads, dh})), 1);
  Value merged = t.reshape(mixed, Shape{m, d});
  Value o = t.gelu(t.linear(merged, v.out1_w, v.out1_b));
  o = t.gelu(t.linear(o, v.out2_w, v.out2_b));
  res.output = t.linear(o, v.out3_w, v.out3_b);
  return res;
}

Value decode(Tape& t, const EnfVars& v, const EnfConfig& cfg, Value pose_state, Value contexts,
             const geom::CoordBatch& coords) {
  return decode_full(t, v, cfg, pose_state, contexts, coords).output;
}

Tensor decode_latent(const ParamStore& store, const EnfConfig& cfg, const LatentSet& z,
                     const std::vector<geom::Coordinate>& coords) {
  Tape t;
  BoundParams bp(t, store, false);
  EnfVars v = bind_enf(t, bp);
  Value state = t.constant(geom::pose_state_tensor(cfg.geometry, z.poses));
  Value ctx = t.constant(z.contexts);
  return decode(t, v, cfg, state, ctx, geom::make_coord_batch(cfg.geometry, coords)).val();
}

LatentSet init_latent(const EnfConfig& cfg) {
  using geom::Tag;
  const int n = cfg.n_latents;
  LatentSet z;
  z.geometry = cfg.geometry;
  z.contexts = Tensor(Shape{n, cfg.context_dim});  // zeros
  switch (cfg.geometry.tag) {
    case Tag::PlaneSE2:
    case Tag::Torus2:
    case Tag::NoSym: {
      const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
      if (k * k != n)
        throw std::invalid_argument("init_latent: grid placement needs a square latent count, got " +
                                    std::to_string(n));
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double u = (i + 0.5) / k, w = (j + 0.5) / k;
          if (cfg.geometry.tag == Tag::Torus2)
            z.poses.push_back(geom::make_pose(cfg.geometry, {u, w}));
          else {
            const double e = cfg.domain_extent, c0 = cfg.domain_center;
            const double x = c0 - e + 2.0 * e * u, y = c0 - e + 2.0 * e * w;
            if (cfg.geometry.tag == Tag::PlaneSE2)
              z.poses.push_back(geom::make_pose(cfg.geometry, {x, y, 0.0}));
            else
              z.poses.push_back(geom::make_pose(cfg.geometry, {x, y}));
          }
        }
      break;
    }
    case Tag::SphereSO3:
    case Tag::SphereSW: {
      const double golden = 2.39996322972865332;  // 2 pi (2 - phi)
      for (int i = 0; i < n; ++i) {
        const double zc = 1.0 - (2.0 * i + 1.0) / n;
        const double theta = std::acos(zc);
        const double phi = geom::wrap_two_pi(golden * i);
        z.poses.push_back(geom::make_pose(cfg.geometry, {phi, theta, 0.0}));
      }
      break;
    }
    case Tag::Ball3: {
      const double golden = 2.39996322972865332;
      for (int i = 0; i < n; ++i) {
        const double zc = 1.0 - (2.0 * i + 1.0) / n;
        const double theta = std::acos(zc);
        const double phi = geom::wrap_two_pi(golden * i);
        const double r = 0.1 + 0.85 * std::cbrt((i + 0.5) / n);
        z.poses.push_back(geom::make_pose(cfg.geometry, {phi, theta, 0.0, r}));
      }
      break;
    }
  }
  return z;
}

}  // namespace enfode
