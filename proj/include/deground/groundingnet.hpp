#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "deground/boxes9dof.hpp"
#include "deground/geometry.hpp"
#include "deground/nn.hpp"

// Shared-query detection and grounding network. One decoder and one box head
// serve both tasks; the tasks differ in the scoring head used for query
// selection, the classification head, and whether text is attended.

namespace deground {

enum class Task { kDetection, kGrounding };

inline const char* task_name(Task t) { return t == Task::kDetection ? "detection" : "grounding"; }

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 1;
  std::size_t ffn = 64;
  std::size_t head_hidden = 32;
  std::size_t num_classes = 8;
  std::size_t word_dim = 32;      // stub word-table width
  std::size_t voxel_in = 36;      // pooled point-feature width
  std::size_t view_channels = 16; // stub 2D feature width
  std::size_t k_det = 32;
  std::size_t k_grd = 16;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw Error(std::string("model config: ") + name + " must be > 0");
    };
    positive(dim, "dim");
    positive(heads, "heads");
    positive(ffn, "ffn");
    positive(head_hidden, "head_hidden");
    positive(num_classes, "num_classes");
    positive(word_dim, "word_dim");
    positive(voxel_in, "voxel_in");
    positive(view_channels, "view_channels");
    positive(k_det, "k_det");
    positive(k_grd, "k_grd");
    if (dim % heads != 0) throw Error("model config: dim must be divisible by heads");
  }

  nn::AttentionSpec attn() const { return {dim, heads}; }
  nn::MlpSpec head(std::size_t out) const { return {{dim, head_hidden, out}}; }
  nn::MlpSpec ffn_spec() const { return {{dim, ffn, dim}}; }
};

/// Box head layout: center offset (3), log extents (3), sin/cos per angle (6).
inline constexpr std::size_t kBoxHeadWidth = 12;

inline std::string layer_prefix(std::size_t l) { return "decoder.layer" + std::to_string(l); }

/// Registers every parameter. Order is fixed so a seed gives identical weights.
/// QIM and RAG parameters always exist; the runtime flags only bypass them.
inline void init_model(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = cfg.dim;
  add_fusion_params(store, rng, "fusion", cfg.voxel_in, cfg.view_channels, c);
  nn::add_linear(store, rng, "text.proj", cfg.word_dim, c);

  nn::add_mlp(store, rng, "score.det", cfg.head(cfg.num_classes));
  nn::add_mlp(store, rng, "score.grd", cfg.head(1));

  // beta = xi1(S) starts at exactly 1, gamma = xi2(S) at exactly 0.
  nn::add_mlp(store, rng, "qim.xi1", cfg.head(c), nn::Init::kZero, 1.0);
  nn::add_mlp(store, rng, "qim.xi2", cfg.head(c), nn::Init::kZero, 0.0);

  nn::add_attention(store, rng, "rag.attn", cfg.attn(), /*zero_output=*/true);
  nn::add_mlp(store, rng, "rag.relevance", cfg.head(1));

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto p = layer_prefix(l);
    for (const char* block : {"self", "text", "visual"}) {
      nn::add_layer_norm(store, p + ".norm_" + block, c);
      nn::add_attention(store, rng, p + "." + block, cfg.attn());
    }
    nn::add_layer_norm(store, p + ".norm_ffn", c);
    nn::add_mlp(store, rng, p + ".ffn", cfg.ffn_spec());
  }
  if (cfg.layers > 0) nn::add_layer_norm(store, "decoder.norm_out", c);

  nn::add_mlp(store, rng, "head.box", cfg.head(kBoxHeadWidth));
  nn::add_mlp(store, rng, "head.det", cfg.head(cfg.num_classes));
  nn::add_mlp(store, rng, "head.grd", cfg.head(1));
}

// --- inputs -----------------------------------------------------------------

/// Per-scene network input: voxels with pooled 3D features plus the
/// multi-view 2D samples at each voxel center.
struct SceneInput {
  VoxelFeatureSet voxels;
  Tensor sampled2d;  // N x view_channels
};

inline Var encode_visual(Tape& tape, const SceneInput& in) {
  return fuse_features(tape, "fusion", in.voxels, in.sampled2d);
}

struct TextEmbedding {
  Var tokens;    // T x C
  Var sentence;  // 1 x C
};

inline Var sentence_embed(const Var& tokens) {
  if (tokens.rows() == 0) throw Error("sentence_embed: no tokens");
  return mean_rows(tokens);
}

/// Projects stub word vectors (T x word_dim) to the model width.
inline TextEmbedding embed_text(Tape& tape, const Tensor& word_vectors) {
  if (word_vectors.rows() == 0) throw Error("embed_text: no tokens");
  auto tokens = nn::linear(tape, "text.proj", tape.constant(word_vectors));
  return {tokens, sentence_embed(tokens)};
}

// --- query selection --------------------------------------------------------

struct QuerySet {
  Var embeddings;                   // K x C
  Tensor positions;                 // K x 3 voxel centers
  std::vector<std::size_t> voxel;   // selected voxel rows
  std::vector<double> scores;       // non-increasing
};

struct Selection {
  QuerySet queries;
  Var voxel_logits;  // N x classes (detection) or N x 1 (grounding)
};

/// Top-k of `scores`, ties broken toward the lower index.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  if (k > scores.size()) {
    throw Error("select_queries: K=" + std::to_string(k) + " exceeds voxel count " +
                std::to_string(scores.size()));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

/// Builds K queries from rows `index` of `features`: feature + positional
/// encoding of the voxel center.
inline QuerySet make_queries(const Var& features, const Tensor& coords,
                             const std::vector<std::size_t>& index,
                             std::vector<double> scores) {
  std::vector<double> pos;
  for (auto i : index) {
    for (std::size_t a = 0; a < 3; ++a) pos.push_back(coords.at(i, a));
  }
  Tensor positions = Tensor::matrix(index.size(), 3, std::move(pos));
  auto pe = nn::sinusoidal_encoding(positions, features.cols());
  auto emb = add(gather_rows(features, index), features.tape().constant(pe));
  return {emb, std::move(positions), index, std::move(scores)};
}

/// Scores every voxel with the task's scoring head and keeps the top K.
/// `fixed` replaces the ranking with a given selection (used to hold the
/// non-differentiable choice constant during finite differencing).
inline Selection select_queries(Tape& tape, const ModelConfig& cfg, const Var& features,
                                const Tensor& coords, std::size_t k, Task task,
                                const std::vector<std::size_t>* fixed = nullptr) {
  const bool det = task == Task::kDetection;
  auto logits = nn::mlp_apply(tape, det ? "score.det" : "score.grd",
                              cfg.head(det ? cfg.num_classes : 1), features);
  const auto& L = logits.value();
  std::vector<double> score(L.rows());
  for (std::size_t i = 0; i < L.rows(); ++i) {
    double m = L.at(i, 0);
    for (std::size_t j = 1; j < L.cols(); ++j) m = std::max(m, L.at(i, j));
    score[i] = m;
  }
  std::vector<std::size_t> index = fixed ? *fixed : top_k(score, k);
  std::vector<double> chosen;
  for (auto i : index) chosen.push_back(score.at(i));
  return {make_queries(features, coords, index, std::move(chosen)), logits};
}

// --- QIM --------------------------------------------------------------------

/// Q_mod = beta (.) Q + gamma (.) S with beta = xi1(S), gamma = xi2(S).
inline Var qim_modulate(Tape& tape, const ModelConfig& cfg, const Var& queries,
                        const Var& sentence) {
  auto beta = nn::mlp_apply(tape, "qim.xi1", cfg.head(cfg.dim), sentence);
  auto gamma = nn::mlp_apply(tape, "qim.xi2", cfg.head(cfg.dim), sentence);
  return add_row(mul_row(queries, beta), mul(sentence, gamma));
}

// --- RAG --------------------------------------------------------------------

struct RagOutput {
  Var region;     // F_visual + attention(F_visual, text), N x C
  Var relevance;  // N x 1 logits
  nn::AttentionTrace trace;
};

inline RagOutput rag_apply(Tape& tape, const ModelConfig& cfg, const Var& visual,
                           const Var& text_tokens) {
  RagOutput out;
  auto attended = nn::attention(tape, "rag.attn", cfg.attn(), visual, text_tokens, text_tokens,
                                &out.trace);
  out.region = add(visual, attended);
  out.relevance = nn::mlp_apply(tape, "rag.relevance", cfg.head(1), out.region);
  return out;
}

// --- decoder ----------------------------------------------------------------

struct DecoderOutput {
  Var raw_box;     // K x 12
  Var center;      // K x 3
  Var log_extent;  // K x 3
  Var trig;        // K x 6: sin, cos of alpha, beta, gamma
  Var logits;      // K x classes or K x 1
  std::vector<Box9DoF> boxes;
};

/// Decodes a box from head outputs. Log extents are clamped to [-10, 10] so
/// an untrained head still yields a valid box.
inline Box9DoF decode_box(const Vec3& position, std::span<const double> raw) {
  Vec3 c = position + Vec3(raw[0], raw[1], raw[2]);
  Vec3 e;
  for (int a = 0; a < 3; ++a) e[a] = std::exp(std::clamp(raw[3 + a], -10.0, 10.0));
  Vec3 ang;
  for (int a = 0; a < 3; ++a) ang[a] = std::atan2(raw[6 + 2 * a], raw[7 + 2 * a]);
  return Box9DoF(c, e, ang);
}

/// Turns raw box-head rows (K x 12) and logits into a DecoderOutput;
/// centers are offsets from `positions` (K x 3).
inline DecoderOutput decode_heads(const Var& raw_box, const Var& logits, const Tensor& positions) {
  if (raw_box.cols() != kBoxHeadWidth || raw_box.rows() != positions.rows() ||
      logits.rows() != raw_box.rows()) {
    throw Error("decode_heads: shape mismatch");
  }
  Tape& tape = raw_box.tape();
  DecoderOutput out;
  out.raw_box = raw_box;
  out.center = add(slice_cols(raw_box, 0, 3), tape.constant(positions));
  out.log_extent = slice_cols(raw_box, 3, 6);
  std::vector<Var> trig;
  for (std::size_t a = 0; a < 3; ++a) {
    auto angle = atan2(slice_cols(raw_box, 6 + 2 * a, 7 + 2 * a),
                       slice_cols(raw_box, 7 + 2 * a, 8 + 2 * a));
    trig.push_back(sin(angle));
    trig.push_back(cos(angle));
  }
  out.trig = concat_cols(trig);
  out.logits = logits;
  const auto& raw = raw_box.value();
  for (std::size_t k = 0; k < raw.rows(); ++k) {
    const Vec3 pos(positions.at(k, 0), positions.at(k, 1), positions.at(k, 2));
    out.boxes.push_back(decode_box(pos, raw.data().subspan(k * kBoxHeadWidth, kBoxHeadWidth)));
  }
  return out;
}

/// Pre-norm decoder: self-attention, text cross-attention (grounding only),
/// visual cross-attention, feed-forward, each with a residual. `memory` is
/// attended with keys memory + PE(coords).
inline DecoderOutput decoder_forward(Tape& tape, const ModelConfig& cfg, const Var& memory,
                                     const Tensor& memory_coords,
                                     const std::optional<Var>& text_tokens,
                                     const QuerySet& queries, Task task) {
  if (queries.embeddings.cols() != cfg.dim || memory.cols() != cfg.dim) {
    throw Error("decoder: feature width does not match model dim " + std::to_string(cfg.dim));
  }
  if (memory.rows() != memory_coords.rows()) {
    throw Error("decoder: memory rows and coordinates differ");
  }
  if (task == Task::kGrounding && !text_tokens) throw Error("decoder: grounding needs text");
  auto keys = add(memory, tape.constant(nn::sinusoidal_encoding(memory_coords, cfg.dim)));
  Var x = queries.embeddings;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto p = layer_prefix(l);
    auto h = nn::layer_norm(tape, p + ".norm_self", x);
    x = add(x, nn::attention(tape, p + ".self", cfg.attn(), h, h, h));
    if (task == Task::kGrounding) {
      h = nn::layer_norm(tape, p + ".norm_text", x);
      x = add(x, nn::attention(tape, p + ".text", cfg.attn(), h, *text_tokens, *text_tokens));
    }
    h = nn::layer_norm(tape, p + ".norm_visual", x);
    x = add(x, nn::attention(tape, p + ".visual", cfg.attn(), h, keys, memory));
    h = nn::layer_norm(tape, p + ".norm_ffn", x);
    x = add(x, nn::mlp_apply(tape, p + ".ffn", cfg.ffn_spec(), h));
  }
  if (cfg.layers > 0) x = nn::layer_norm(tape, "decoder.norm_out", x);

  auto raw = nn::mlp_apply(tape, "head.box", cfg.head(kBoxHeadWidth), x);
  auto logits = task == Task::kDetection
                    ? nn::mlp_apply(tape, "head.det", cfg.head(cfg.num_classes), x)
                    : nn::mlp_apply(tape, "head.grd", cfg.head(1), x);
  return decode_heads(raw, logits, queries.positions);
}

// --- full forward -----------------------------------------------------------

struct ForwardOptions {
  bool use_rag = true;
  bool use_qim = true;
  /// Fixed query selections (voxel rows) overriding the top-K ranking.
  const std::vector<std::size_t>* fixed_det = nullptr;
  const std::vector<std::size_t>* fixed_grd = nullptr;
};

struct DetectionForward {
  Selection selection;
  DecoderOutput out;
};

struct GroundingForward {
  Selection selection;
  DecoderOutput out;
  std::optional<RagOutput> rag;  // absent when RAG is disabled
};

inline DetectionForward detect(Tape& tape, const ModelConfig& cfg, const Var& visual,
                               const Tensor& coords, const ForwardOptions& opt = {}) {
  const std::size_t k = std::min(cfg.k_det, visual.rows());
  auto sel = select_queries(tape, cfg, visual, coords, k, Task::kDetection, opt.fixed_det);
  auto out = decoder_forward(tape, cfg, visual, coords, std::nullopt, sel.queries,
                             Task::kDetection);
  return {std::move(sel), std::move(out)};
}

/// Grounding path: RAG refines the features, the grounding scoring head picks
/// queries on the refined features, QIM modulates them, the shared decoder
/// predicts.
inline GroundingForward ground(Tape& tape, const ModelConfig& cfg, const Var& visual,
                               const Tensor& coords, const TextEmbedding& text,
                               const ForwardOptions& opt = {}) {
  GroundingForward g;
  Var features = visual;
  if (opt.use_rag) {
    g.rag = rag_apply(tape, cfg, visual, text.tokens);
    features = g.rag->region;
  }
  const std::size_t k = std::min(cfg.k_grd, visual.rows());
  g.selection = select_queries(tape, cfg, features, coords, k, Task::kGrounding, opt.fixed_grd);
  QuerySet q = g.selection.queries;
  if (opt.use_qim) q.embeddings = qim_modulate(tape, cfg, q.embeddings, text.sentence);
  g.out = decoder_forward(tape, cfg, features, coords, text.tokens, q, Task::kGrounding);
  return g;
}

}  // namespace deground
