#include "capsfield/capsule/capsule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/ops.hpp"

namespace capsfield::capsule {

using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;
namespace detail = numerics::detail;

void CapsuleConfig::validate() const {
  if (num_secondary < 1) throw ConfigError("need at least one secondary capsule");
  if (capsule_size < 1) throw ConfigError("capsule size must be positive");
  if (routing_iterations < 1) throw ConfigError("need at least one routing iteration");
}

std::size_t CapsuleConfig::primary_count(std::size_t views, std::size_t embedding_dim) const {
  validate();
  const std::size_t total = views * embedding_dim;
  if (total == 0 || total % capsule_size != 0)
    throw ConfigError("V * D = " + std::to_string(total) + " is not divisible by capsule size " +
                      std::to_string(capsule_size));
  return total / capsule_size;
}

Tensor init_pose_matrices(std::size_t primary, const CapsuleConfig& cfg, numerics::Rng& rng) {
  cfg.validate();
  const std::size_t cs = cfg.capsule_size;
  Tensor w({primary, cfg.num_secondary, cs, cs}, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cs));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

Var squash(Var s) {
  const Tensor& sv = s.value();
  if (!sv.all_finite()) throw NumericError("squash: non-finite input");
  const std::size_t cs = sv.shape().back();
  const std::size_t n = sv.size() / cs;
  Tensor out(sv.shape(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* in = sv.data().data() + r * cs;
    double n2 = 0.0;
    for (std::size_t k = 0; k < cs; ++k) n2 += in[k] * in[k];
    if (n2 == 0.0) continue;
    const double f = std::sqrt(n2) / (1.0 + n2);
    double* o = out.data().data() + r * cs;
    for (std::size_t k = 0; k < cs; ++k) o[k] = f * in[k];
  }
  return s.tape().record(std::move(out), {s}, [s, cs, n](const Tensor& g, const Tensor&, Tape& tape) {
    const Tensor& sv = s.value();
    double* ds = tape.grad_buffer(s).data().data();
    for (std::size_t r = 0; r < n; ++r) {
      const double* in = sv.data().data() + r * cs;
      const double* go = g.data().data() + r * cs;
      double n2 = 0.0, sg = 0.0;
      for (std::size_t k = 0; k < cs; ++k) {
        n2 += in[k] * in[k];
        sg += in[k] * go[k];
      }
      if (n2 == 0.0) continue;
      const double norm = std::sqrt(n2);
      const double f = norm / (1.0 + n2);
      // f'(|s|) / |s| with f(x) = x / (1 + x^2).
      const double df = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2)) / norm;
      for (std::size_t k = 0; k < cs; ++k) ds[r * cs + k] += f * go[k] + df * sg * in[k];
    }
  });
}

Var pose_predict(Var v, Var w) {
  const Tensor& vv = v.value();
  const Tensor& wv = w.value();
  if (vv.rank() != 3 || wv.rank() != 4 || wv.dim(0) != vv.dim(1) || wv.dim(2) != vv.dim(2) ||
      wv.dim(3) != vv.dim(2))
    throw ShapeError("pose_predict: capsules " + numerics::to_string(vv.shape()) +
                     " do not fit pose matrices " + numerics::to_string(wv.shape()));
  const std::size_t B = vv.dim(0), np = vv.dim(1), cs = vv.dim(2), nc = wv.dim(1);
  const std::size_t block = nc * cs;  // outputs per (b, i)
  Tensor out({B, np, nc, cs}, 0.0);
  std::vector<double> vi(B * cs), oi(B * block);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(vv.data().data() + (b * np + i) * cs, cs, vi.data() + b * cs);
    std::fill(oi.begin(), oi.end(), 0.0);
    detail::gemm_nt(B, cs, block, vi.data(), wv.data().data() + i * block * cs, oi.data());
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(oi.data() + b * block, block, out.data().data() + (b * np + i) * block);
  }
  return v.tape().record(std::move(out), {v, w}, [v, w, B, np, cs, block](const Tensor& g, const Tensor&, Tape& tape) {
    const bool need_v = tape.requires_grad(v), need_w = tape.requires_grad(w);
    const double* vd = v.value().data().data();
    const double* wd = w.value().data().data();
    std::vector<double> vi(B * cs), gi(B * block), dvi(B * cs);
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(vd + (b * np + i) * cs, cs, vi.data() + b * cs);
        std::copy_n(g.data().data() + (b * np + i) * block, block, gi.data() + b * block);
      }
      if (need_w)
        detail::gemm_tn(block, B, cs, gi.data(), vi.data(), tape.grad_buffer(w).data().data() + i * block * cs);
      if (need_v) {
        std::fill(dvi.begin(), dvi.end(), 0.0);
        detail::gemm_nn(B, block, cs, gi.data(), wd + i * block * cs, dvi.data());
        double* dv = tape.grad_buffer(v).data().data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t k = 0; k < cs; ++k) dv[(b * np + i) * cs + k] += dvi[b * cs + k];
      }
    }
  });
}

Var coupling_sum(Var c, Var u_hat) {
  const Tensor& cv = c.value();
  const Tensor& uv = u_hat.value();
  if (cv.rank() != 3 || uv.rank() != 4 || cv.dim(0) != uv.dim(0) || cv.dim(1) != uv.dim(1) ||
      cv.dim(2) != uv.dim(2))
    throw ShapeError("coupling_sum: coefficients " + numerics::to_string(cv.shape()) +
                     " do not fit predictions " + numerics::to_string(uv.shape()));
  const std::size_t B = uv.dim(0), np = uv.dim(1), nc = uv.dim(2), cs = uv.dim(3);
  Tensor out({B, nc, cs}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nc; ++j) {
        const double cij = cv[(b * np + i) * nc + j];
        const double* u = uv.data().data() + ((b * np + i) * nc + j) * cs;
        double* o = out.data().data() + (b * nc + j) * cs;
        for (std::size_t k = 0; k < cs; ++k) o[k] += cij * u[k];
      }
  return c.tape().record(std::move(out), {c, u_hat}, [c, u_hat, B, np, nc, cs](const Tensor& g, const Tensor&, Tape& tape) {
    const bool need_c = tape.requires_grad(c), need_u = tape.requires_grad(u_hat);
    const double* cd = c.value().data().data();
    const double* ud = u_hat.value().data().data();
    double* dc = need_c ? tape.grad_buffer(c).data().data() : nullptr;
    double* du = need_u ? tape.grad_buffer(u_hat).data().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < nc; ++j) {
          const std::size_t cij = (b * np + i) * nc + j;
          const double* gj = g.data().data() + (b * nc + j) * cs;
          if (need_c) {
            double dot = 0.0;
            for (std::size_t k = 0; k < cs; ++k) dot += gj[k] * ud[cij * cs + k];
            dc[cij] += dot;
          }
          if (need_u)
            for (std::size_t k = 0; k < cs; ++k) du[cij * cs + k] += cd[cij] * gj[k];
        }
  });
}

Var agreement(Var u_hat, Var v) {
  const Tensor& uv = u_hat.value();
  const Tensor& vv = v.value();
  if (uv.rank() != 4 || vv.rank() != 3 || vv.dim(0) != uv.dim(0) || vv.dim(1) != uv.dim(2) ||
      vv.dim(2) != uv.dim(3))
    throw ShapeError("agreement: predictions " + numerics::to_string(uv.shape()) +
                     " do not fit outputs " + numerics::to_string(vv.shape()));
  const std::size_t B = uv.dim(0), np = uv.dim(1), nc = uv.dim(2), cs = uv.dim(3);
  Tensor out({B, np, nc}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nc; ++j) {
        const double* u = uv.data().data() + ((b * np + i) * nc + j) * cs;
        const double* o = vv.data().data() + (b * nc + j) * cs;
        double dot = 0.0;
        for (std::size_t k = 0; k < cs; ++k) dot += u[k] * o[k];
        out[(b * np + i) * nc + j] = dot;
      }
  return u_hat.tape().record(std::move(out), {u_hat, v}, [u_hat, v, B, np, nc, cs](const Tensor& g, const Tensor&, Tape& tape) {
    const bool need_u = tape.requires_grad(u_hat), need_v = tape.requires_grad(v);
    const double* ud = u_hat.value().data().data();
    const double* vd = v.value().data().data();
    double* du = need_u ? tape.grad_buffer(u_hat).data().data() : nullptr;
    double* dv = need_v ? tape.grad_buffer(v).data().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < nc; ++j) {
          const std::size_t ij = (b * np + i) * nc + j;
          const double gij = g[ij];
          const std::size_t vj = (b * nc + j) * cs;
          for (std::size_t k = 0; k < cs; ++k) {
            if (need_u) du[ij * cs + k] += gij * vd[vj + k];
            if (need_v) dv[vj + k] += gij * ud[ij * cs + k];
          }
        }
  });
}

Var reshape_to_primary(Var embeddings, const CapsuleConfig& cfg) {
  cfg.validate();
  const Shape& shape = embeddings.shape();
  if (shape.size() < 2) throw ShapeError("reshape_to_primary: expected a batch of embedding sequences");
  const std::size_t batch = shape[0];
  const std::size_t per_sample = embeddings.value().size() / batch;
  if (per_sample % cfg.capsule_size != 0)
    throw ConfigError("reshape_to_primary: " + std::to_string(per_sample) +
                      " features are not divisible by capsule size " + std::to_string(cfg.capsule_size));
  return squash(numerics::reshape(embeddings, {batch, per_sample / cfg.capsule_size, cfg.capsule_size}));
}

namespace {

RoutingOutput route(Var u_hat, const CapsuleConfig& cfg) {
  cfg.validate();
  const Shape& s = u_hat.shape();
  if (s.size() != 4 || s[2] != cfg.num_secondary || s[3] != cfg.capsule_size)
    throw ShapeError("dynamic_routing: predictions " + numerics::to_string(s) + " do not match the capsule config");
  Tape& tape = u_hat.tape();
  Var logits = tape.constant(Tensor({s[0], s[1], s[2]}, 0.0));
  RoutingOutput out;
  const Var u_agree = cfg.detach_routing ? numerics::stop_gradient(u_hat) : u_hat;
  if (!u_hat.value().all_finite()) throw NumericError("dynamic_routing: non-finite pose predictions");
  for (std::size_t it = 0; it < cfg.routing_iterations; ++it) {
    const auto fail = [it] {
      return NumericError("dynamic_routing: non-finite value at iteration " + std::to_string(it + 1));
    };
    if (!logits.value().all_finite()) throw fail();
    const Var c = numerics::softmax_rows(logits);
    const Var s_j = coupling_sum(c, u_hat);
    if (!s_j.value().all_finite()) throw fail();
    const Var v = squash(s_j);
    out.coupling_history.push_back(c.value());
    out.coupling = c;
    out.secondary = v;
    if (it + 1 < cfg.routing_iterations) {
      const Var v_agree = cfg.detach_routing ? numerics::stop_gradient(v) : v;
      logits = numerics::add(logits, agreement(u_agree, v_agree));
    }
  }
  return out;
}

RoutingResult unbatch(const RoutingOutput& r) {
  RoutingResult out;
  const Shape& vs = r.secondary.shape();
  const Shape& cs = r.coupling.shape();
  out.secondary = r.secondary.value().reshaped({vs[1], vs[2]});
  out.coupling = r.coupling.value().reshaped({cs[1], cs[2]});
  for (const auto& c : r.coupling_history) out.coupling_history.push_back(c.reshaped({cs[1], cs[2]}));
  return out;
}

}  // namespace

RoutingOutput dynamic_routing(Var primary, Var pose, const CapsuleConfig& cfg) {
  return route(pose_predict(primary, pose), cfg);
}

Var flatten_capsules(Var secondary) {
  const Shape& s = secondary.shape();
  if (s.size() != 3) throw ShapeError("flatten_capsules: expected [B, N_c, C_s]");
  return numerics::reshape(secondary, {s[0], s[1] * s[2]});
}

Tensor squash(const Tensor& s) {
  Tape tape(false);
  return squash(tape.constant(s)).value();
}

RoutingResult dynamic_routing(const Tensor& primary, const Tensor& pose, const CapsuleConfig& cfg) {
  if (primary.rank() != 2) throw ShapeError("dynamic_routing: primary capsules must be [N_p, C_s]");
  Tape tape(false);
  const Var v = tape.constant(primary.reshaped({1, primary.dim(0), primary.dim(1)}));
  return unbatch(dynamic_routing(v, tape.constant(pose), cfg));
}

RoutingResult route_predictions(const Tensor& u_hat, const CapsuleConfig& cfg) {
  if (u_hat.rank() != 3) throw ShapeError("route_predictions: u_hat must be [N_p, N_c, C_s]");
  Tape tape(false);
  return unbatch(route(tape.constant(u_hat.reshaped({1, u_hat.dim(0), u_hat.dim(1), u_hat.dim(2)})), cfg));
}

Tensor flatten_capsules(const Tensor& secondary) {
  if (secondary.rank() != 2) throw ShapeError("flatten_capsules: expected [N_c, C_s]");
  return secondary.reshaped({secondary.size()});
}

}  // namespace capsfield::capsule
