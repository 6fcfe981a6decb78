#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "deground/ops.hpp"
#include "deground/params.hpp"
#include "deground/rng.hpp"

// Parameterized building blocks. Parameters live in a ParamStore under a
// name prefix; each block has a registration function (add_*) and an apply
// function that reads the parameters through a Tape.

namespace deground::nn {

enum class Init { kXavier, kZero };

inline Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  return Tensor::matrix(fan_in, fan_out, std::move(w));
}

// --- linear -----------------------------------------------------------------

/// y = x W + b with W: in x out, b: 1 x out.
inline void add_linear(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in,
                       std::size_t out, Init init = Init::kXavier, double bias = 0.0) {
  store.add(prefix + ".weight",
            init == Init::kZero ? Tensor::zeros({in, out}) : xavier_uniform(rng, in, out));
  store.add(prefix + ".bias", Tensor::filled({1, out}, bias));
}

inline Var linear(Tape& tape, const std::string& prefix, const Var& x) {
  auto w = tape.param(prefix + ".weight");
  auto b = tape.param(prefix + ".bias");
  if (x.cols() != w.rows()) {
    throw Error("layer '" + prefix + "': input width " + std::to_string(x.cols()) +
                " does not match expected " + std::to_string(w.rows()));
  }
  return add_row(matmul(x, w), b);
}

// --- mlp --------------------------------------------------------------------

enum class Activation { kRelu, kNone };

struct MlpSpec {
  std::vector<std::size_t> sizes;  // input, hidden..., output
  Activation activation = Activation::kRelu;
};

inline void add_mlp(ParamStore& store, Rng& rng, const std::string& prefix, const MlpSpec& spec,
                    Init last_init = Init::kXavier, double last_bias = 0.0) {
  if (spec.sizes.size() < 2) throw Error("mlp '" + prefix + "': needs at least two sizes");
  const std::size_t layers = spec.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    add_linear(store, rng, prefix + ".l" + std::to_string(l), spec.sizes[l], spec.sizes[l + 1],
               last ? last_init : Init::kXavier, last ? last_bias : 0.0);
  }
}

/// Applies the activation between layers, never after the last one.
inline Var mlp_apply(Tape& tape, const std::string& prefix, const MlpSpec& spec, Var x) {
  const std::size_t layers = spec.sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    x = linear(tape, prefix + ".l" + std::to_string(l), x);
    if (l + 1 < layers && spec.activation == Activation::kRelu) x = relu(x);
  }
  return x;
}

// --- layer norm -------------------------------------------------------------

inline void add_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gain", Tensor::filled({1, dim}, 1.0));
  store.add(prefix + ".shift", Tensor::zeros({1, dim}));
}

inline Var layer_norm(Tape& tape, const std::string& prefix, const Var& x, double eps = 1e-5) {
  return add_row(mul_row(normalize_rows(x, eps), tape.param(prefix + ".gain")),
                 tape.param(prefix + ".shift"));
}

// --- attention --------------------------------------------------------------

struct AttentionSpec {
  std::size_t dim = 0;
  std::size_t heads = 1;
};

/// Per-head attention weights (queries x keys) from the last call.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

/// Registers q/k/v/out projections. The key projection has no bias: softmax
/// is invariant to it, so it would only carry an identically zero gradient.
/// A zero-initialized output projection makes the block output exactly zero
/// at initialization.
inline void add_attention(ParamStore& store, Rng& rng, const std::string& prefix,
                          const AttentionSpec& spec, bool zero_output = false) {
  if (spec.heads == 0 || spec.dim % spec.heads != 0) {
    throw Error("attention '" + prefix + "': dim " + std::to_string(spec.dim) +
                " not divisible by heads " + std::to_string(spec.heads));
  }
  add_linear(store, rng, prefix + ".q", spec.dim, spec.dim);
  store.add(prefix + ".k.weight", xavier_uniform(rng, spec.dim, spec.dim));
  add_linear(store, rng, prefix + ".v", spec.dim, spec.dim);
  add_linear(store, rng, prefix + ".out", spec.dim, spec.dim,
             zero_output ? Init::kZero : Init::kXavier);
}

/// softmax(Q Wq (K Wk)^T / sqrt(d_head)) V Wv per head, concatenated and
/// projected by Wo. Queries N x C, keys/values T x C.
inline Var attention(Tape& tape, const std::string& prefix, const AttentionSpec& spec,
                     const Var& queries, const Var& keys, const Var& values,
                     AttentionTrace* trace = nullptr) {
  if (keys.rows() == 0) throw Error("attention '" + prefix + "': no keys");
  if (keys.rows() != values.rows()) {
    throw Error("attention '" + prefix + "': key/value counts differ");
  }
  auto q = linear(tape, prefix + ".q", queries);
  auto k = matmul(keys, tape.param(prefix + ".k.weight"));
  auto v = linear(tape, prefix + ".v", values);
  const std::size_t dh = spec.dim / spec.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  if (trace) trace->weights.clear();
  for (std::size_t h = 0; h < spec.heads; ++h) {
    Var qh = spec.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = spec.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = spec.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    auto weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (trace) trace->weights.push_back(weights.value());
    heads.push_back(matmul(weights, vh));
  }
  auto merged = spec.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(tape, prefix + ".out", merged);
}

// --- positional encoding ----------------------------------------------------

/// Fixed sinusoidal encoding of 3D positions into `dim` channels. Each axis
/// gets floor(dim / 6) sin/cos pairs at angular frequencies 2^k * pi / 4;
/// leftover channels are zero.
inline Tensor sinusoidal_encoding(const Tensor& positions, std::size_t dim) {
  const std::size_t n = positions.rows();
  if (positions.cols() != 3) throw Error("sinusoidal_encoding: positions must be N x 3");
  const std::size_t freqs = dim / 6;
  std::vector<double> out(n * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const double p = positions.at(i, axis);
      for (std::size_t f = 0; f < freqs; ++f) {
        const double w = std::ldexp(1.0, static_cast<int>(f)) * 0.25 * 3.14159265358979323846;
        out[i * dim + c++] = std::sin(w * p);
        out[i * dim + c++] = std::cos(w * p);
      }
    }
  }
  return Tensor::matrix(n, dim, std::move(out));
}

}  // namespace deground::nn
