#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "deground/tape.hpp"

// Differentiable matrix operations recorded on a Tape. All operands are
// rank-2; row vectors are 1 x n.

namespace deground {

namespace detail {

inline void require_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().shape() != b.value().shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_string(a.value().shape()) +
                " vs " + shape_string(b.value().shape()));
  }
}

inline void require_row(const Var& a, const Var& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw Error(std::string(op) + ": expected a 1x" + std::to_string(a.cols()) +
                " row, got " + shape_string(row.value().shape()));
  }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  const auto& A = a.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i]);
  auto aid = a.id();
  return a.tape().record(Tensor(A.shape(), std::move(out)), {a},
                         [aid, dfdx](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const auto& x = t.value(aid);
                           const auto& y = t.value(self);
                           auto ga = t.grad(aid);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i] * dfdx(x[i], y[i]);
                           }
                         });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_log_sigmoid(double x) {
  return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) {
    throw Error("matmul: inner dimensions differ " + shape_string(A.shape()) + " * " +
                shape_string(B.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * B[p * m + j];
    }
  }
  auto aid = a.id(), bid = b.id();
  return a.tape().record(
      Tensor::matrix(n, m, std::move(out)), {a, b},
      [aid, bid, n, k, m](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& A = t.value(aid);
        const auto& B = t.value(bid);
        if (t.requires_grad(aid)) {
          auto ga = t.grad(aid);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * B[p * m + j];
              ga[i * k + p] += s;
            }
        }
        if (t.requires_grad(bid)) {
          auto gb = t.grad(bid);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
            }
        }
      });
}

inline Var transpose(const Var& a) {
  const auto& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  auto aid = a.id();
  return a.tape().record(Tensor::matrix(c, r, std::move(out)), {a},
                         [aid, r, c](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto ga = t.grad(aid);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                         });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_shape(a, b, "add");
  const auto& A = a.value();
  const auto& B = b.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  auto aid = a.id(), bid = b.id();
  return a.tape().record(Tensor(A.shape(), std::move(out)), {a, b},
                         [aid, bid](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           for (auto id : {aid, bid}) {
                             if (!t.requires_grad(id)) continue;
                             auto gx = t.grad(id);
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           }
                         });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_shape(a, b, "sub");
  const auto& A = a.value();
  const auto& B = b.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  auto aid = a.id(), bid = b.id();
  return a.tape().record(Tensor(A.shape(), std::move(out)), {a, b},
                         [aid, bid](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           if (t.requires_grad(aid)) {
                             auto ga = t.grad(aid);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(bid)) {
                             auto gb = t.grad(bid);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                         });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_shape(a, b, "mul");
  const auto& A = a.value();
  const auto& B = b.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  auto aid = a.id(), bid = b.id();
  return a.tape().record(Tensor(A.shape(), std::move(out)), {a, b},
                         [aid, bid](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const auto& A = t.value(aid);
                           const auto& B = t.value(bid);
                           if (t.requires_grad(aid)) {
                             auto ga = t.grad(aid);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
                           }
                           if (t.requires_grad(bid)) {
                             auto gb = t.grad(bid);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
                           }
                         });
}

/// a + 1·row, broadcasting a 1 x m row over every row of a.
inline Var add_row(const Var& a, const Var& row) {
  detail::require_row(a, row, "add_row");
  const auto& A = a.value();
  const auto& R = row.value();
  const std::size_t n = A.rows(), m = A.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = A[i * m + j] + R[j];
  auto aid = a.id(), rid = row.id();
  return a.tape().record(Tensor::matrix(n, m, std::move(out)), {a, row},
                         [aid, rid, n, m](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           if (t.requires_grad(aid)) {
                             auto ga = t.grad(aid);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(rid)) {
                             auto gr = t.grad(rid);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
                           }
                         });
}

/// a ⊙ (1·row), broadcasting a 1 x m row over every row of a.
inline Var mul_row(const Var& a, const Var& row) {
  detail::require_row(a, row, "mul_row");
  const auto& A = a.value();
  const auto& R = row.value();
  const std::size_t n = A.rows(), m = A.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = A[i * m + j] * R[j];
  auto aid = a.id(), rid = row.id();
  return a.tape().record(Tensor::matrix(n, m, std::move(out)), {a, row},
                         [aid, rid, n, m](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const auto& A = t.value(aid);
                           const auto& R = t.value(rid);
                           if (t.requires_grad(aid)) {
                             auto ga = t.grad(aid);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j)
                                 ga[i * m + j] += g[i * m + j] * R[j];
                           }
                           if (t.requires_grad(rid)) {
                             auto gr = t.grad(rid);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j)
                                 gr[j] += g[i * m + j] * A[i * m + j];
                           }
                         });
}

/// Replicates a 1 x m row into n x m.
inline Var broadcast_rows(const Var& row, std::size_t n) {
  if (row.rows() != 1) throw Error("broadcast_rows: expected a row vector");
  const auto& R = row.value();
  const std::size_t m = R.cols();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = R[j];
  auto rid = row.id();
  return row.tape().record(Tensor::matrix(n, m, std::move(out)), {row},
                           [rid, n, m](Tape& t, std::size_t self) {
                             auto g = t.grad(self);
                             auto gr = t.grad(rid);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
                           });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

/// log(sigmoid(x)), stable for large |x|.
inline Var log_sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::stable_log_sigmoid(x); },
      [](double x, double) { return detail::stable_sigmoid(-x); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x <= 0.0) throw Error("log: non-positive argument");
        return std::log(x);
      },
      [](double x, double) { return 1.0 / x; });
}

inline Var sin(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Var cos(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

/// |x|; the subgradient at 0 is taken as 0.
inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

/// Elementwise atan2(y, x).
inline Var atan2(const Var& y, const Var& x) {
  detail::require_shape(y, x, "atan2");
  const auto& Y = y.value();
  const auto& X = x.value();
  std::vector<double> out(Y.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::atan2(Y[i], X[i]);
  auto yid = y.id(), xid = x.id();
  return y.tape().record(Tensor(Y.shape(), std::move(out)), {y, x},
                         [yid, xid](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const auto& Y = t.value(yid);
                           const auto& X = t.value(xid);
                           const bool gy = t.requires_grad(yid), gx = t.requires_grad(xid);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double r2 = X[i] * X[i] + Y[i] * Y[i];
                             if (r2 == 0.0) continue;
                             if (gy) t.grad(yid)[i] += g[i] * X[i] / r2;
                             if (gx) t.grad(xid)[i] -= g[i] * Y[i] / r2;
                           }
                         });
}

/// Row-wise softmax, shifted by the row max.
inline Var softmax_rows(const Var& a) {
  const auto& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (m == 0) throw Error("softmax: empty axis");
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = A[i * m];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, A[i * m + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = std::exp(A[i * m + j] - mx);
      sum += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= sum;
  }
  auto aid = a.id();
  return a.tape().record(Tensor::matrix(n, m, std::move(out)), {a},
                         [aid, n, m](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const auto& Y = t.value(self);
                           auto ga = t.grad(aid);
                           for (std::size_t i = 0; i < n; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * Y[i * m + j];
                             for (std::size_t j = 0; j < m; ++j)
                               ga[i * m + j] += Y[i * m + j] * (g[i * m + j] - dot);
                           }
                         });
}

/// Per-row standardization (x - mean) / sqrt(var + eps), biased variance.
inline Var normalize_rows(const Var& a, double eps = 1e-5) {
  const auto& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  std::vector<double> out(n * m);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += A[i * m + j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = A[i * m + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (A[i * m + j] - mean) * inv_std[i];
  }
  auto aid = a.id();
  return a.tape().record(
      Tensor::matrix(n, m, std::move(out)), {a},
      [aid, n, m, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& Y = t.value(self);
        auto ga = t.grad(aid);
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i) {
          double gmean = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            gmean += g[i * m + j];
            gy += g[i * m + j] * Y[i * m + j];
          }
          gmean *= inv_m;
          gy *= inv_m;
          for (std::size_t j = 0; j < m; ++j)
            ga[i * m + j] += inv_std[i] * (g[i * m + j] - gmean - Y[i * m + j] * gy);
        }
      });
}

inline Var sum_all(const Var& a) {
  const auto& A = a.value();
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += A[i];
  auto aid = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [aid](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto ga = t.grad(aid);
    for (auto& x : ga) x += g;
  });
}

inline Var mean_all(const Var& a) {
  if (a.value().size() == 0) throw Error("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Column means: n x m -> 1 x m.
inline Var mean_rows(const Var& a) {
  const auto& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (n == 0) throw Error("mean_rows: no rows");
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += A[i * m + j];
  for (auto& x : out) x /= static_cast<double>(n);
  auto aid = a.id();
  return a.tape().record(Tensor::matrix(1, m, std::move(out)), {a},
                         [aid, n, m](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto ga = t.grad(aid);
                           const double inv = 1.0 / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j] * inv;
                         });
}

/// Selects rows by index (repeats allowed).
inline Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  const auto& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  std::vector<double> out(index.size() * m);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw Error("gather_rows: index " + std::to_string(index[r]) + " out of range " +
                  std::to_string(n));
    }
    std::copy_n(A.data().begin() + static_cast<std::ptrdiff_t>(index[r] * m), m,
                out.begin() + static_cast<std::ptrdiff_t>(r * m));
  }
  auto aid = a.id();
  const std::size_t k = index.size();
  return a.tape().record(Tensor::matrix(k, m, std::move(out)), {a},
                         [aid, m, index = std::move(index)](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto ga = t.grad(aid);
                           for (std::size_t r = 0; r < index.size(); ++r)
                             for (std::size_t j = 0; j < m; ++j)
                               ga[index[r] * m + j] += g[r * m + j];
                         });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths, ids;
  for (const auto& p : parts) {
    if (p.rows() != n) throw Error("concat_cols: row counts differ");
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    const std::size_t w = P.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + offset + j] = P[i * w + j];
    offset += w;
  }
  return parts[0].tape().record(
      Tensor::matrix(n, total, std::move(out)), std::span<const Var>(parts),
      [ids = std::move(ids), widths = std::move(widths), n, total](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const std::size_t w = widths[p];
          if (t.requires_grad(ids[p])) {
            auto gp = t.grad(ids[p]);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + offset + j];
          }
          offset += w;
        }
      });
}

/// Columns [begin, end).
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (begin > end || end > m) throw Error("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A[i * m + begin + j];
  auto aid = a.id();
  return a.tape().record(Tensor::matrix(n, w, std::move(out)), {a},
                         [aid, n, m, w, begin](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto ga = t.grad(aid);
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < w; ++j)
                               ga[i * m + begin + j] += g[i * w + j];
                         });
}

}  // namespace deground
