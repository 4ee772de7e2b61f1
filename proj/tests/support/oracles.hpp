#pragma once

// Deliberately naive reference implementations. Each one recomputes from first principles
// with plain loops so that it shares no code path with the library under test.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "mmfss/nn.hpp"
#include "mmfss/tensor.hpp"

namespace mmfss::oracle {

inline double dist2(const Tensor& x, std::size_t i, std::size_t j) {
  double s = 0;
  for (std::size_t a = 0; a < x.dim(1); ++a) s += (x(i, a) - x(j, a)) * (x(i, a) - x(j, a));
  return s;
}

/// Max-min selection recomputing every candidate's distance to the whole selected set.
inline std::vector<std::size_t> fps(const Tensor& pts, std::size_t n, std::size_t start) {
  const std::size_t m = pts.dim(0);
  std::vector<std::size_t> sel{start};
  while (sel.size() < std::min(n, m)) {
    std::size_t best = 0;
    double best_d = -1;
    for (std::size_t c = 0; c < m; ++c) {
      bool used = false;
      for (std::size_t s : sel) used = used || s == c;
      if (used) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) d = std::min(d, dist2(pts, c, s));
      if (d > best_d) best_d = d, best = c;
    }
    sel.push_back(best);
  }
  for (std::size_t i = m; i < n; ++i) sel.push_back(sel[i % m]);
  return sel;
}

/// FPS seeds over the masked points, nearest-seed assignment, per-cluster feature mean.
inline Tensor cluster_means(const Tensor& feats, const Tensor& coords, const std::vector<std::uint8_t>& mask,
                            std::size_t n_p) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) members.push_back(i);
  Tensor sub({members.size(), 3});
  for (std::size_t r = 0; r < members.size(); ++r)
    for (std::size_t a = 0; a < 3; ++a) sub(r, a) = coords(members[r], a);
  auto seeds = fps(sub, n_p, 0);
  Tensor out({n_p, feats.dim(1)});
  for (std::size_t j = 0; j < n_p; ++j) {
    // the first occurrence of a seed owns its cluster
    std::size_t owner = j;
    for (std::size_t q = 0; q < j; ++q)
      if (seeds[q] == seeds[j]) {
        owner = q;
        break;
      }
    double count = 0;
    for (std::size_t r = 0; r < members.size(); ++r) {
      std::size_t nearest = 0;
      double nd = std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < std::min(n_p, members.size()); ++q) {
        const double d = dist2(sub, r, seeds[q]);
        if (d < nd) nd = d, nearest = q;
      }
      if (nearest != owner) continue;
      count += 1;
      for (std::size_t c = 0; c < feats.dim(1); ++c) out(j, c) += feats(members[r], c);
    }
    for (std::size_t c = 0; c < feats.dim(1); ++c) out(j, c) /= count;
  }
  return out;
}

inline double phi(double x) { return x > 0 ? x + 1.0 : std::exp(x); }

/// O(L^2) attention: out_i = sum_j w_ij v_j / sum_j w_ij with w_ij = phi(q_i) . phi(k_j).
inline Tensor quadratic_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t L = q.dim(0), D = q.dim(1), Dv = v.dim(1);
  Tensor out({L, Dv});
  for (std::size_t i = 0; i < L; ++i) {
    double norm = 0;
    for (std::size_t j = 0; j < L; ++j) {
      double w = 0;
      for (std::size_t d = 0; d < D; ++d) w += phi(q(i, d)) * phi(k(j, d));
      norm += w;
      for (std::size_t c = 0; c < Dv; ++c) out(i, c) += w * v(j, c);
    }
    for (std::size_t c = 0; c < Dv; ++c) out(i, c) /= norm;
  }
  return out;
}

/// Per-class IoU from an explicit confusion matrix; classes with an empty union are absent.
inline std::map<int, double> confusion_iou(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes,
                                           const std::set<int>& targets) {
  std::vector<std::vector<long>> cm(static_cast<std::size_t>(n_classes), std::vector<long>(static_cast<std::size_t>(n_classes)));
  for (std::size_t i = 0; i < pred.size(); ++i) ++cm[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  std::map<int, double> out;
  for (int c : targets) {
    const auto cc = static_cast<std::size_t>(c);
    long tp = cm[cc][cc], fp = 0, fn = 0;
    for (std::size_t o = 0; o < cm.size(); ++o) {
      if (o == cc) continue;
      fp += cm[o][cc];
      fn += cm[cc][o];
    }
    if (tp + fp + fn > 0) out[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }
  return out;
}


/// x W + b with plain loops; W is in x out.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out({x.dim(0), w.dim(1)});
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t o = 0; o < w.dim(1); ++o) {
      double s = b.empty() ? 0.0 : b[o];
      for (std::size_t c = 0; c < w.dim(0); ++c) s += x(i, c) * w(c, o);
      out(i, o) = s;
    }
  return out;
}

inline Tensor linear(const Tensor& x, const ParamStore& ps, const std::string& name) {
  return linear(x, ps.at(name + ".weight").value(), ps.contains(name + ".bias") ? ps.at(name + ".bias").value() : Tensor());
}

inline Tensor relu(Tensor t) {
  for (double& v : t.data()) v = v > 0 ? v : 0.0;
  return t;
}

inline Tensor mlp(Tensor x, const ParamStore& ps, const std::string& name, std::size_t depth) {
  for (std::size_t l = 0; l < depth; ++l) {
    x = linear(x, ps, name + "." + std::to_string(l));
    if (l + 1 < depth) x = relu(x);
  }
  return x;
}

/// Correlation fusion by hand: reshape each correlation to (q, c) rows of N_P values, project, add.
inline Tensor mcf(const Tensor& ci, const Tensor& cu, const ParamStore& ps, std::size_t nc, std::size_t np,
                  const std::string& lin_u = "mcf.lin_u") {
  const std::size_t nq = ci.dim(0);
  Tensor a({nq * nc, np}), b({nq * nc, np});
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t p = 0; p < np; ++p) {
        a(q * nc + c, p) = ci(q, c * np + p);
        b(q * nc + c, p) = cu(q, c * np + p);
      }
  Tensor x = linear(a, ps, "mcf.lin_i"), y = linear(b, ps, lin_u);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  return x.reshaped({nq, nc, x.dim(1)});
}

/// Gate, residual attention and MLP step by step for block `b`, with the quadratic attention oracle per class.
inline Tensor msf_block(const Tensor& c, const Tensor& g, const ParamStore& ps, std::size_t b, bool sigmoid_gate = false) {
  const std::size_t nq = c.dim(0), nc = c.dim(1), d = c.dim(2);
  const std::string n = "msf" + std::to_string(b);
  Tensor in({nq * nc, 2 * d});
  for (std::size_t r = 0; r < nq * nc; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      in(r, j) = g[r];
      in(r, d + j) = c[r * d + j];
    }
  Tensor w = mlp(in, ps, n + ".gate", 2);
  Tensor cp({nq * nc, d});
  for (std::size_t r = 0; r < nq * nc; ++r) {
    const double wr = sigmoid_gate ? 1.0 / (1.0 + std::exp(-w[r])) : w[r];
    for (std::size_t j = 0; j < d; ++j) cp(r, j) = g[r] * wr + c[r * d + j];
  }
  Tensor q = linear(cp, ps, n + ".q"), k = linear(cp, ps, n + ".k"), v = linear(cp, ps, n + ".v");
  Tensor attn({nq * nc, d});
  for (std::size_t cls = 0; cls < nc; ++cls) {
    Tensor qs({nq, d}), ks({nq, d}), vs({nq, d});
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        qs(i, j) = q(i * nc + cls, j);
        ks(i, j) = k(i * nc + cls, j);
        vs(i, j) = v(i * nc + cls, j);
      }
    Tensor o = quadratic_attention(qs, ks, vs);
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t j = 0; j < d; ++j) attn(i * nc + cls, j) = cp(i * nc + cls, j) + o(i, j);
  }
  Tensor m = mlp(attn, ps, n + ".mlp", 2);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += attn[i];
  return m.reshaped({nq, nc, d});
}

/// Naive KPConv: explicit neighbor loops and kernel weights, then the linear map, ReLU and MLP.
inline Tensor kp_decode(const Tensor& c, const Tensor& coords, const Tensor& layout, double radius_scale,
                        const ParamStore& ps) {
  const std::size_t nq = c.dim(0), width = c.dim(1) * c.dim(2), p = layout.dim(0);
  double spacing = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nq; ++j)
      if (j != i) best = std::min(best, std::sqrt(dist2(coords, i, j)));
    spacing += nq > 1 ? best : 0.0;
  }
  double r = radius_scale * spacing / static_cast<double>(nq);
  if (!(r > 0)) r = 1.0;
  Tensor feat({nq, p * width});
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<std::size_t> nb;
    for (std::size_t j = 0; j < nq; ++j)
      if (std::sqrt(dist2(coords, i, j)) <= r) nb.push_back(j);
    for (std::size_t k = 0; k < p; ++k)
      for (std::size_t j : nb) {
        double d = 0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double o = coords(j, a) - coords(i, a) - r * layout(k, a);
          d += o * o;
        }
        const double h = std::max(0.0, 1.0 - std::sqrt(d) / r) / static_cast<double>(nb.size());
        for (std::size_t f = 0; f < width; ++f) feat(i, k * width + f) += h * c[j * width + f];
      }
  }
  return mlp(relu(linear(feat, ps, "decoder.kp")), ps, "decoder.mlp", 2);
}

/// Mean over rows of logsumexp(row) - row[label].
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  double total = 0;
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < logits.dim(1); ++c) mx = std::max(mx, logits(i, c));
    double s = 0;
    for (std::size_t c = 0; c < logits.dim(1); ++c) s += std::exp(logits(i, c) - mx);
    total += mx + std::log(s) - logits(i, static_cast<std::size_t>(labels[i]));
  }
  return total / static_cast<double>(logits.dim(0));
}

}  // namespace mmfss::oracle
