#include "newsdistill/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "newsdistill/errors.hpp"

namespace newsdistill::ops {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

const Tensor& checked(const Tensor& out, const char* op) {
  if (!out.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
  return out;
}

std::span<double> data_of(Tensor& t) { return t.mutable_values(); }

// C[m x n] += A[m x k] . B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  // Four rows of C per sweep over B.
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = bp[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += A[m x n] . B[k x n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(a, bt.data(), c, m, n, k);
}

// C[k x n] += A[m x k]^T . B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* b0 = b + i * n;
    const double* b1 = b0 + n;
    const double* b2 = b1 + n;
    const double* b3 = b2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(a.values().data(), b.values().data(), data_of(out).data(), m, k, n);
  checked(out, "matmul");
  if (tape.tracks({&a, &b})) {
    tape.record("matmul", {a, b}, out, [a, b, out, m, k, n] {
      const double* dc = out.grad().data();
      if (a.requires_grad()) gemm_nt(dc, b.values().data(), grad_sink(a).data(), m, n, k);
      if (b.requires_grad()) gemm_tn(a.values().data(), dc, grad_sink(b).data(), m, k, n);
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  auto o = data_of(out);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  checked(out, "add");
  if (tape.tracks({&a, &b})) {
    tape.record("add", {a, b}, out, [a, b, out] {
      auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto d = grad_sink(*t);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  auto o = data_of(out);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  checked(out, "sub");
  if (tape.tracks({&a, &b})) {
    tape.record("sub", {a, b}, out, [a, b, out] {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto d = grad_sink(a);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (b.requires_grad()) {
        auto d = grad_sink(b);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out(x.shape());
  auto o = data_of(out);
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  checked(out, "scale");
  if (tape.tracks({&x})) {
    tape.record("scale", {x}, out, [x, out, factor] {
      auto g = out.grad();
      auto d = grad_sink(x);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.rank() != 1 || bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                         shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  auto o = data_of(out);
  auto xv = x.values(), bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = xv[i * n + j] + bv[j];
  }
  checked(out, "add_bias");
  if (tape.tracks({&x, &bias})) {
    tape.record("add_bias", {x, bias}, out, [x, bias, out, m, n] {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto d = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto d = grad_sink(bias);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
        }
      }
    });
  }
  return out;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto o = data_of(out);
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = xv[i];
    o[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  checked(out, "gelu");
  if (tape.tracks({&x})) {
    tape.record("gelu", {x}, out, [x, out] {
      auto g = out.grad();
      auto xv = x.values();
      auto d = grad_sink(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        d[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  }
  return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto o = data_of(out);
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(xv[i]);
  checked(out, "tanh");
  if (tape.tracks({&x})) {
    tape.record("tanh", {x}, out, [x, out] {
      auto g = out.grad();
      auto y = out.values();
      auto d = grad_sink(x);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  if (tape.tracks({&x})) {
    tape.record("reshape", {x}, out, [x, out] {
      auto g = out.grad();
      auto d = grad_sink(x);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  }
  return out;
}

Tensor detach(const Tensor& x) {
  return Tensor(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  checked(out, "sum");
  if (tape.tracks({&x})) {
    tape.record("sum", {x}, out, [x, out] {
      const double g = out.grad()[0];
      for (double& d : grad_sink(x)) d += g;
    });
  }
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_to_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t len = shape[axis];
  const std::size_t outer = x.numel() / (len * inner);

  Tensor out(shape);
  auto o = data_of(out);
  auto xv = x.values();
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * len * inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xv[base + i * inner] - mx);
        o[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < len; ++i) o[base + i * inner] /= z;
    }
  }
  checked(out, "softmax");
  if (tape.tracks({&x})) {
    tape.record("softmax", {x}, out, [x, out, outer, inner, len] {
      auto g = out.grad();
      auto y = out.values();
      auto d = grad_sink(x);
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t base = a * len * inner + c;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = base + i * inner;
            d[idx] += y[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: gamma/beta " + shape_to_string(gamma.shape()) + "/" +
                         shape_to_string(beta.shape()) + " do not match last axis of " + shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  std::vector<double> xhat(m * n);
  std::vector<double> rstd(m);
  auto o = data_of(out);
  auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    rstd[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * r;
      xhat[i * n + j] = h;
      o[i * n + j] = gv[j] * h + bv[j];
    }
  }
  checked(out, "layer_norm");
  if (tape.tracks({&x, &gamma, &beta})) {
    tape.record("layer_norm", {x, gamma, beta}, out,
                [x, gamma, beta, out, m, n, xhat = std::move(xhat), rstd = std::move(rstd)] {
                  auto g = out.grad();
                  auto gv = gamma.values();
                  if (gamma.requires_grad()) {
                    auto d = grad_sink(gamma);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j] * xhat[i * n + j];
                  }
                  if (beta.requires_grad()) {
                    auto d = grad_sink(beta);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
                  }
                  if (x.requires_grad()) {
                    auto d = grad_sink(x);
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      double mean_dh = 0.0, mean_dh_h = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dh = g[i * n + j] * gv[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[i * n + j];
                      }
                      mean_dh *= inv_n;
                      mean_dh_h *= inv_n;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dh = g[i * n + j] * gv[j];
                        d[i * n + j] += rstd[i] * (dh - mean_dh - xhat[i * n + j] * mean_dh_h);
                      }
                    }
                  }
                });
  }
  return out;
}

Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  for (auto id : ids) {
    if (id >= vocab) {
      throw InputError("token id " + std::to_string(id) + " out of vocabulary of size " + std::to_string(vocab));
    }
  }
  Tensor out({ids.size(), d});
  auto o = data_of(out);
  auto tv = table.values();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(tv.data() + ids[r] * d, d, o.data() + r * d);
  }
  if (tape.tracks({&table})) {
    std::vector<std::size_t> idv(ids.begin(), ids.end());
    tape.record("embedding", {table}, out, [table, out, d, idv = std::move(idv)] {
      auto g = out.grad();
      auto dt = grad_sink(table);
      for (std::size_t r = 0; r < idv.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) dt[idv[r] * d + j] += g[r * d + j];
      }
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (rows.empty()) throw DimensionError("gather_rows: empty row list");
  for (auto r : rows) {
    if (r != kZeroRow && r >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " outside " + shape_to_string(x.shape()));
    }
  }
  Tensor out({rows.size(), d});
  auto o = data_of(out);
  auto xv = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] == kZeroRow) continue;
    std::copy_n(xv.data() + rows[i] * d, d, o.data() + i * d);
  }
  if (tape.tracks({&x})) {
    std::vector<std::size_t> rv(rows.begin(), rows.end());
    tape.record("gather_rows", {x}, out, [x, out, d, rv = std::move(rv)] {
      auto g = out.grad();
      auto dx = grad_sink(x);
      for (std::size_t i = 0; i < rv.size(); ++i) {
        if (rv[i] == kZeroRow) continue;
        for (std::size_t j = 0; j < d; ++j) dx[rv[i] * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factor(x.numel());
  for (double& f : factor) f = rng->bernoulli(p) ? 0.0 : keep_scale;
  Tensor out(x.shape());
  auto o = data_of(out);
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor[i];
  if (tape.tracks({&x})) {
    tape.record("dropout", {x}, out, [x, out, factor = std::move(factor)] {
      auto g = out.grad();
      auto d = grad_sink(x);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor[i];
    });
  }
  return out;
}

namespace {

struct AttentionGeometry {
  std::size_t batch, seq, heads, dh, width;
};

AttentionGeometry attention_geometry(const Tensor& q, const Tensor& k, const Tensor& v, SequenceLayout layout,
                                     std::size_t heads, const Mask& key_mask) {
  require_matrix(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  if (q.rows() != layout.rows()) {
    throw DimensionError("attention: " + shape_to_string(q.shape()) + " does not hold " +
                         std::to_string(layout.batch) + " sequences of " + std::to_string(layout.seq));
  }
  if (key_mask.size() != layout.rows()) throw DimensionError("attention: mask length differs from row count");
  const std::size_t width = q.cols();
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(width));
  }
  return {layout.batch, layout.seq, heads, width / heads, width};
}

// probs[(b, h, i, j)] for one batch entry b and head h.
void attention_probs_block(const double* q, const double* k, const std::uint8_t* mask, const AttentionGeometry& g,
                           std::size_t head, double* probs) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(g.dh));
  bool any_key = false;
  for (std::size_t j = 0; j < g.seq; ++j) any_key = any_key || mask[j];
  if (!any_key) throw InputError("attention: sequence has no unmasked position");
  for (std::size_t i = 0; i < g.seq; ++i) {
    const double* qi = q + i * g.width + head * g.dh;
    double* row = probs + i * g.seq;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g.seq; ++j) {
      if (!mask[j]) continue;
      const double* kj = k + j * g.width + head * g.dh;
      double s = 0.0;
      for (std::size_t c = 0; c < g.dh; ++c) s += qi[c] * kj[c];
      s *= inv_sqrt;
      row[j] = s;
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < g.seq; ++j) {
      if (!mask[j]) {
        row[j] = 0.0;
        continue;
      }
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < g.seq; ++j) row[j] /= z;
  }
}

}  // namespace

std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, SequenceLayout layout,
                                            std::size_t heads, const Mask& key_mask) {
  const auto g = attention_geometry(q, k, k, layout, heads, key_mask);
  std::vector<double> probs(g.batch * g.heads * g.seq * g.seq);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t h = 0; h < g.heads; ++h) {
      attention_probs_block(q.values().data() + b * g.seq * g.width, k.values().data() + b * g.seq * g.width,
                            key_mask.data() + b * g.seq, g, h, probs.data() + ((b * g.heads + h) * g.seq * g.seq));
    }
  }
  return probs;
}

Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, SequenceLayout layout,
                 std::size_t heads, const Mask& key_mask, double dropout_p, Rng* rng) {
  const auto g = attention_geometry(q, k, v, layout, heads, key_mask);
  const bool drop = dropout_p > 0.0 && rng != nullptr;
  if (drop && dropout_p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  const std::size_t block = g.seq * g.seq;
  std::vector<double> probs(g.batch * g.heads * block);
  std::vector<double> dropped;  // probabilities after dropout, when active
  if (drop) dropped.resize(probs.size());

  Tensor out(q.shape());
  auto o = data_of(out);
  const double keep_scale = drop ? 1.0 / (1.0 - dropout_p) : 1.0;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const std::size_t row0 = b * g.seq;
    const double* qb = q.values().data() + row0 * g.width;
    const double* kb = k.values().data() + row0 * g.width;
    const double* vb = v.values().data() + row0 * g.width;
    for (std::size_t h = 0; h < g.heads; ++h) {
      double* p = probs.data() + (b * g.heads + h) * block;
      attention_probs_block(qb, kb, key_mask.data() + row0, g, h, p);
      const double* pe = p;
      if (drop) {
        double* pd = dropped.data() + (b * g.heads + h) * block;
        for (std::size_t e = 0; e < block; ++e) pd[e] = rng->bernoulli(dropout_p) ? 0.0 : p[e] * keep_scale;
        pe = pd;
      }
      for (std::size_t i = 0; i < g.seq; ++i) {
        double* oi = o.data() + (row0 + i) * g.width + h * g.dh;
        for (std::size_t j = 0; j < g.seq; ++j) {
          const double w = pe[i * g.seq + j];
          if (w == 0.0) continue;
          const double* vj = vb + j * g.width + h * g.dh;
          for (std::size_t c = 0; c < g.dh; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  checked(out, "attention");
  if (tape.tracks({&q, &k, &v})) {
    tape.record("attention", {q, k, v}, out,
                [q, k, v, out, g, key_mask, drop, keep_scale, probs = std::move(probs), dropped = std::move(dropped)] {
                  const std::size_t block = g.seq * g.seq;
                  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(g.dh));
                  auto go = out.grad();
                  std::span<double> dq, dk, dv;
                  if (q.requires_grad()) dq = grad_sink(q);
                  if (k.requires_grad()) dk = grad_sink(k);
                  if (v.requires_grad()) dv = grad_sink(v);
                  std::vector<double> dp(block), ds(block);
                  for (std::size_t b = 0; b < g.batch; ++b) {
                    const std::size_t row0 = b * g.seq;
                    const double* qb = q.values().data() + row0 * g.width;
                    const double* kb = k.values().data() + row0 * g.width;
                    const double* vb = v.values().data() + row0 * g.width;
                    for (std::size_t h = 0; h < g.heads; ++h) {
                      const double* p = probs.data() + (b * g.heads + h) * block;
                      const double* pe = drop ? dropped.data() + (b * g.heads + h) * block : p;
                      // dOut -> dPe, dV
                      for (std::size_t i = 0; i < g.seq; ++i) {
                        const double* goi = go.data() + (row0 + i) * g.width + h * g.dh;
                        for (std::size_t j = 0; j < g.seq; ++j) {
                          const double* vj = vb + j * g.width + h * g.dh;
                          double s = 0.0;
                          for (std::size_t c = 0; c < g.dh; ++c) s += goi[c] * vj[c];
                          dp[i * g.seq + j] = s;
                          if (!dv.empty()) {
                            const double w = pe[i * g.seq + j];
                            if (w != 0.0) {
                              double* dvj = dv.data() + (row0 + j) * g.width + h * g.dh;
                              for (std::size_t c = 0; c < g.dh; ++c) dvj[c] += w * goi[c];
                            }
                          }
                        }
                      }
                      if (drop) {
                        for (std::size_t e = 0; e < block; ++e) {
                          dp[e] = (pe[e] == 0.0 && p[e] != 0.0) ? 0.0 : dp[e] * keep_scale;
                        }
                      }
                      // softmax backward
                      for (std::size_t i = 0; i < g.seq; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < g.seq; ++j) dot += dp[i * g.seq + j] * p[i * g.seq + j];
                        for (std::size_t j = 0; j < g.seq; ++j) {
                          ds[i * g.seq + j] = p[i * g.seq + j] * (dp[i * g.seq + j] - dot) * inv_sqrt;
                        }
                      }
                      for (std::size_t i = 0; i < g.seq; ++i) {
                        for (std::size_t j = 0; j < g.seq; ++j) {
                          const double s = ds[i * g.seq + j];
                          if (s == 0.0) continue;
                          if (!dq.empty()) {
                            double* dqi = dq.data() + (row0 + i) * g.width + h * g.dh;
                            const double* kj = kb + j * g.width + h * g.dh;
                            for (std::size_t c = 0; c < g.dh; ++c) dqi[c] += s * kj[c];
                          }
                          if (!dk.empty()) {
                            double* dkj = dk.data() + (row0 + j) * g.width + h * g.dh;
                            const double* qi = qb + i * g.width + h * g.dh;
                            for (std::size_t c = 0; c < g.dh; ++c) dkj[c] += s * qi[c];
                          }
                        }
                      }
                    }
                  }
                });
  }
  return out;
}

Tensor segment_softmax(Tape& tape, const Tensor& scores, SequenceLayout layout, const Mask& mask, bool allow_empty) {
  if (scores.numel() != layout.rows() || mask.size() != layout.rows()) {
    throw DimensionError("segment_softmax: " + shape_to_string(scores.shape()) + " does not hold " +
                         std::to_string(layout.batch) + " segments of " + std::to_string(layout.seq));
  }
  Tensor out({layout.rows()});
  auto o = data_of(out);
  auto sv = scores.values();
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const std::size_t base = b * layout.seq;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < layout.seq; ++i) {
      if (!mask[base + i]) continue;
      any = true;
      mx = std::max(mx, sv[base + i]);
    }
    if (!any) {
      if (!allow_empty) throw InputError("attentive pooling over a fully masked sequence");
      continue;
    }
    double z = 0.0;
    for (std::size_t i = 0; i < layout.seq; ++i) {
      if (!mask[base + i]) continue;
      o[base + i] = std::exp(sv[base + i] - mx);
      z += o[base + i];
    }
    for (std::size_t i = 0; i < layout.seq; ++i) o[base + i] /= z;
  }
  checked(out, "segment_softmax");
  if (tape.tracks({&scores})) {
    tape.record("segment_softmax", {scores}, out, [scores, out, layout] {
      auto g = out.grad();
      auto y = out.values();
      auto d = grad_sink(scores);
      for (std::size_t b = 0; b < layout.batch; ++b) {
        const std::size_t base = b * layout.seq;
        double dot = 0.0;
        for (std::size_t i = 0; i < layout.seq; ++i) dot += g[base + i] * y[base + i];
        for (std::size_t i = 0; i < layout.seq; ++i) d[base + i] += y[base + i] * (g[base + i] - dot);
      }
    });
  }
  return out;
}

Tensor segment_weighted_sum(Tape& tape, const Tensor& weights, const Tensor& x, SequenceLayout layout) {
  require_matrix(x, "segment_weighted_sum");
  if (x.rows() != layout.rows() || weights.numel() != layout.rows()) {
    throw DimensionError("segment_weighted_sum: weights " + shape_to_string(weights.shape()) + " and rows " +
                         shape_to_string(x.shape()) + " do not match the layout");
  }
  const std::size_t d = x.cols();
  Tensor out({layout.batch, d});
  auto o = data_of(out);
  auto wv = weights.values();
  auto xv = x.values();
  for (std::size_t b = 0; b < layout.batch; ++b) {
    for (std::size_t i = 0; i < layout.seq; ++i) {
      const std::size_t r = b * layout.seq + i;
      const double w = wv[r];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) o[b * d + j] += w * xv[r * d + j];
    }
  }
  checked(out, "segment_weighted_sum");
  if (tape.tracks({&weights, &x})) {
    tape.record("segment_weighted_sum", {weights, x}, out, [weights, x, out, layout, d] {
      auto g = out.grad();
      auto wv = weights.values();
      auto xv = x.values();
      std::span<double> dw, dx;
      if (weights.requires_grad()) dw = grad_sink(weights);
      if (x.requires_grad()) dx = grad_sink(x);
      for (std::size_t b = 0; b < layout.batch; ++b) {
        for (std::size_t i = 0; i < layout.seq; ++i) {
          const std::size_t r = b * layout.seq + i;
          if (!dw.empty()) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * g[b * d + j];
            dw[r] += s;
          }
          if (!dx.empty()) {
            for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += wv[r] * g[b * d + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor rows_dot(Tape& tape, const Tensor& a, const Tensor& b) {
  require_matrix(a, "rows_dot");
  require_same_shape(a, b, "rows_dot");
  const std::size_t n = a.rows(), d = a.cols();
  Tensor out({n});
  auto o = data_of(out);
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += av[i * d + j] * bv[i * d + j];
    o[i] = s;
  }
  checked(out, "rows_dot");
  if (tape.tracks({&a, &b})) {
    tape.record("rows_dot", {a, b}, out, [a, b, out, n, d] {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto da = grad_sink(a);
        auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) da[i * d + j] += g[i] * bv[i * d + j];
      }
      if (b.requires_grad()) {
        auto db = grad_sink(b);
        auto av = a.values();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) db[i * d + j] += g[i] * av[i * d + j];
      }
    });
  }
  return out;
}

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b, const Mask* row_mask) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.numel();
  std::size_t rows = n, width = 1;
  if (row_mask) {
    require_matrix(a, "mse");
    rows = a.rows();
    width = a.cols();
    if (row_mask->size() != rows) throw DimensionError("mse: row mask length differs from row count");
  }
  auto av = a.values(), bv = b.values();
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_mask && !(*row_mask)[r]) continue;
    for (std::size_t j = 0; j < width; ++j) {
      const double diff = av[r * width + j] - bv[r * width + j];
      s += diff * diff;
    }
    count += width;
  }
  if (count == 0) throw InputError("mse over zero elements");
  Tensor out = Tensor::scalar(s / static_cast<double>(count));
  checked(out, "mse");
  if (tape.tracks({&a, &b})) {
    Mask mask = row_mask ? *row_mask : Mask{};
    tape.record("mse", {a, b}, out, [a, b, out, rows, width, count, mask = std::move(mask)] {
      const double g = out.grad()[0] * 2.0 / static_cast<double>(count);
      auto av = a.values(), bv = b.values();
      std::span<double> da, db;
      if (a.requires_grad()) da = grad_sink(a);
      if (b.requires_grad()) db = grad_sink(b);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!mask.empty() && !mask[r]) continue;
        for (std::size_t j = 0; j < width; ++j) {
          const std::size_t i = r * width + j;
          const double diff = g * (av[i] - bv[i]);
          if (!da.empty()) da[i] += diff;
          if (!db.empty()) db[i] -= diff;
        }
      }
    });
  }
  return out;
}

namespace {

// Row-wise softmax of z * inv_t into `out`.
void softmax_rows(std::span<const double> z, std::size_t rows, std::size_t c, double inv_t, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[r * c + j] * inv_t);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] = std::exp(z[r * c + j] * inv_t - mx);
      s += out[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] /= s;
  }
}

// log of row-wise softmax(z * inv_t)
void log_softmax_rows(std::span<const double> z, std::size_t rows, std::size_t c, double inv_t,
                      std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[r * c + j] * inv_t);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[r * c + j] * inv_t - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = z[r * c + j] * inv_t - lse;
  }
}

}  // namespace

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t rows = logits.rows(), c = logits.cols();
  if (labels.size() != rows) throw DimensionError("cross_entropy: label count differs from row count");
  std::vector<double> logp(rows * c);
  log_softmax_rows(logits.values(), rows, c, 1.0, logp);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= c) throw InputError("label " + std::to_string(labels[r]) + " outside " + std::to_string(c) + " classes");
    loss -= logp[r * c + labels[r]];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(rows));
  checked(out, "cross_entropy");
  if (tape.tracks({&logits})) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    tape.record("cross_entropy", {logits}, out, [logits, out, rows, c, logp = std::move(logp), lab = std::move(lab)] {
      const double g = out.grad()[0] / static_cast<double>(rows);
      auto d = grad_sink(logits);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          const double q = std::exp(logp[r * c + j]);
          d[r * c + j] += g * (q - (j == lab[r] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

Tensor soft_cross_entropy(Tape& tape, const Tensor& target_logits, const Tensor& logits, double temperature,
                          TemperatureMode mode) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  require_matrix(logits, "soft_cross_entropy");
  require_same_shape(target_logits, logits, "soft_cross_entropy");
  const std::size_t rows = logits.rows(), c = logits.cols();
  const double inv_t = mode == TemperatureMode::kLogits ? 1.0 / temperature : 1.0;
  std::vector<double> p(rows * c), logq(rows * c);
  softmax_rows(target_logits.values(), rows, c, inv_t, p);
  log_softmax_rows(logits.values(), rows, c, inv_t, logq);
  double loss = 0.0;
  for (std::size_t i = 0; i < rows * c; ++i) {
    if (p[i] > 0.0) loss -= p[i] * logq[i];
  }
  if (mode == TemperatureMode::kProbabilities) {
    // -sum (p/t) log(q/t) = (CE(p, q) + log t) / t, using sum p = 1 per row.
    loss = (loss + static_cast<double>(rows) * std::log(temperature)) / temperature;
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(rows));
  checked(out, "soft_cross_entropy");
  if (tape.tracks({&logits})) {
    tape.record("soft_cross_entropy", {logits}, out,
                [logits, out, rows, c, temperature, p = std::move(p), logq = std::move(logq)] {
                  // Both temperature readings share the gradient (q - p) / t.
                  const double g = out.grad()[0] / (static_cast<double>(rows) * temperature);
                  auto d = grad_sink(logits);
                  for (std::size_t i = 0; i < rows * c; ++i) d[i] += g * (std::exp(logq[i]) - p[i]);
                });
  }
  return out;
}

Tensor bce_with_logits(Tape& tape, const Tensor& logits, std::span<const double> labels) {
  const std::size_t n = logits.numel();
  if (labels.size() != n) throw DimensionError("bce_with_logits: label count differs from logit count");
  auto z = logits.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // log(1 + exp(-|z|)) + max(z, 0) - z*y
    loss += std::log1p(std::exp(-std::abs(z[i]))) + std::max(z[i], 0.0) - z[i] * labels[i];
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(n));
  checked(out, "bce_with_logits");
  if (tape.tracks({&logits})) {
    std::vector<double> y(labels.begin(), labels.end());
    tape.record("bce_with_logits", {logits}, out, [logits, out, n, y = std::move(y)] {
      const double g = out.grad()[0] / static_cast<double>(n);
      auto z = logits.values();
      auto d = grad_sink(logits);
      for (std::size_t i = 0; i < n; ++i) d[i] += g * (1.0 / (1.0 + std::exp(-z[i])) - y[i]);
    });
  }
  return out;
}

}  // namespace newsdistill::ops
