#pragma once

// The object-contextual pipeline written as a transformer encoder-decoder.
//
// Decoder cross-attention: K category queries attend over the image
// features. The pre-softmax logits are the soft object regions and the
// attention outputs are the region representations. Encoder
// cross-attention: every pixel queries the K decoder outputs; the attention
// output followed by the FFN is the contextual representation y.
//
// Attention operands are row-major: queries [N_q x d], keys [N_kv x d],
// values [N_kv x d_v].

#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "ocrseg/context_modules.hpp"

namespace ocrseg {

template <typename T>
struct QuerySet {
  Tensor<T> queries;  // [K x d]
};

enum class QuerySource { learned, sampled, pooled };

template <typename T>
struct AttentionBundle {
  Tensor<T> queries;
  Tensor<T> keys;
  Tensor<T> values;
  double scale = 1.0;
};

template <typename T>
struct AttentionResult {
  Tensor<T> weights;  // [N_q x N_kv]
  Tensor<T> output;   // [N_q x d_v]
};

// a_ij = softmax_j(scale * q_i^T k_j); output_i = sum_j a_ij v_j.
template <typename T>
AttentionResult<T> scaled_dot_attention(const AttentionBundle<T>& b) {
  detail::require_rank(b.queries, 2, "scaled_dot_attention");
  detail::require_rank(b.keys, 2, "scaled_dot_attention");
  detail::require_rank(b.values, 2, "scaled_dot_attention");
  if (b.queries.dim(1) != b.keys.dim(1)) {
    throw DimensionError("scaled_dot_attention: query width " + std::to_string(b.queries.dim(1)) +
                         " != key width " + std::to_string(b.keys.dim(1)));
  }
  if (b.keys.dim(0) != b.values.dim(0)) {
    throw DimensionError("scaled_dot_attention: " + std::to_string(b.keys.dim(0)) + " keys but " +
                         std::to_string(b.values.dim(0)) + " values");
  }
  const T temp = detail::temperature_for<T>(b.scale, "scaled_dot_attention");
  AttentionResult<T> r;
  r.weights = softmax_rows(matmul(b.queries, transpose(b.keys)), temp);
  r.output = matmul(r.weights, b.values);
  return r;
}

template <typename T>
struct DecoderOutput {
  Tensor<T> region_maps;  // [K x N] pre-softmax logits q_k^T x_i
  Tensor<T> attention;    // [K x N] softmax over the N axis
  Tensor<T> region_reps;  // [K x d_v]
};

// keys = image_features [N x d]; values default to the same features.
template <typename T>
DecoderOutput<T> decoder_cross_attention(const Tensor<T>& image_features, const QuerySet<T>& queries, double scale,
                                         const std::type_identity_t<std::optional<Tensor<T>>>& values = std::nullopt) {
  detail::require_rank(image_features, 2, "decoder_cross_attention");
  if (queries.queries.rank() != 2 || queries.queries.dim(1) != image_features.dim(1)) {
    throw DimensionError("decoder_cross_attention: queries " + shape_str(queries.queries.shape()) +
                         " vs image features " + shape_str(image_features.shape()));
  }
  DecoderOutput<T> out;
  out.region_maps = matmul(queries.queries, transpose(image_features));
  AttentionBundle<T> b{queries.queries, image_features, values ? *values : image_features, scale};
  auto att = scaled_dot_attention(b);
  out.attention = att.weights;
  out.region_reps = att.output;
  return out;
}

// Optional interaction among category queries: q' = Attn(Q, Q, Q).
template <typename T>
QuerySet<T> decoder_self_attention(const QuerySet<T>& queries, double scale) {
  return {scaled_dot_attention(AttentionBundle<T>{queries.queries, queries.queries, queries.queries, scale}).output};
}

// Per-pixel attention over the K decoder outputs followed by the FFN.
// Returns [N x d_out].
template <typename T>
Tensor<T> encoder_cross_attention(const Tensor<T>& pixel_queries, const Tensor<T>& decoder_out, const Tensor<T>& values,
                                  const TransformBlock<T>& ffn, double scale) {
  auto att = scaled_dot_attention(AttentionBundle<T>{pixel_queries, decoder_out, values, scale});
  if (ffn.in_channels() != att.output.dim(1)) {
    throw DimensionError("encoder_cross_attention: FFN expects " + std::to_string(ffn.in_channels()) +
                         " channels, attention yields " + std::to_string(att.output.dim(1)));
  }
  return transpose(transform_forward(ffn, transpose(att.output)));
}

// Queries built from the image instead of learned parameters: `sampled`
// takes K pixels at a regular stride, `pooled` averages K contiguous
// row-major pixel blocks.
template <typename T>
QuerySet<T> queries_from_features(const Tensor<T>& features, std::size_t K, QuerySource source) {
  detail::require_rank(features, 3, "queries_from_features");
  const std::size_t C = features.dim(0), N = features.dim(1) * features.dim(2);
  if (K == 0 || K > N) throw ConfigError("queries_from_features: need 1 <= K <= N");
  if (source == QuerySource::learned) throw ConfigError("queries_from_features: learned queries are parameters");
  Tensor<T> q(Shape{K, C});
  auto f = features.data();
  for (std::size_t k = 0; k < K; ++k) {
    if (source == QuerySource::sampled) {
      const std::size_t i = k * N / K;
      for (std::size_t c = 0; c < C; ++c) q[k * C + c] = f[c * N + i];
    } else {
      const std::size_t a = k * N / K, b = (k + 1) * N / K;
      for (std::size_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (std::size_t i = a; i < b; ++i) acc += f[c * N + i];
        q[k * C + c] = acc / static_cast<T>(b - a);
      }
    }
  }
  return {q};
}

// Transformer-side parameters. A field left empty is "unmapped".
template <typename T>
struct TransformerMapping {
  std::optional<Tensor<T>> category_queries;      // <- soft-region classifier rows
  std::optional<TransformBlock<T>> query_proj;    // <- phi
  std::optional<TransformBlock<T>> key_proj;      // <- psi
  std::optional<TransformBlock<T>> value_proj;    // <- delta
  std::optional<TransformBlock<T>> ffn;           // <- rho
  double decoder_scale = 1.0;                     // spatial softmax carries no scale
  double encoder_scale = 1.0;
  bool decoder_self_attention = false;
};

template <typename T>
TransformerMapping<T> map_ocr_to_transformer(const OcrParams<T>& p, const OcrConfig& cfg) {
  TransformerMapping<T> m;
  m.category_queries = p.classifier;
  m.query_proj = p.phi;
  m.key_proj = p.psi;
  m.value_proj = p.delta;
  m.ffn = p.rho;
  m.decoder_scale = 1.0;
  m.encoder_scale = cfg.scale();
  return m;
}

struct EquivalenceReport {
  double max_abs_discrepancy = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  bool scale_mismatch = false;
  double ocr_scale = 1.0;
  double transformer_scale = 1.0;
  std::string message;
};

// Runs the OCR path (ocr_forward) and the transformer path on the same input
// and compares their contextual representations y.
template <typename T>
EquivalenceReport segformer_equivalence_check(const Tensor<T>& x, const OcrParams<T>& params, const OcrConfig& cfg,
                                              const TransformerMapping<T>& mapping, double tolerance) {
  if (cfg.relation_scheme != RelationScheme::ocr) {
    throw ConfigError("equivalence check: relation scheme '" + std::string(to_string(cfg.relation_scheme)) +
                      "' has no transformer counterpart");
  }
  std::vector<std::string> missing;
  if (!mapping.category_queries) missing.emplace_back("category_queries (region classifier)");
  if (!mapping.query_proj) missing.emplace_back("query_proj (phi)");
  if (!mapping.key_proj) missing.emplace_back("key_proj (psi)");
  if (!mapping.value_proj) missing.emplace_back("value_proj (delta)");
  if (!mapping.ffn) missing.emplace_back("ffn (rho)");
  if (mapping.decoder_self_attention) missing.emplace_back("decoder_self_attention (no OCR counterpart; disable it)");
  if (!missing.empty()) {
    std::string msg = "equivalence check: unmapped transforms:";
    for (const auto& m : missing) msg += " " + m + ";";
    throw ConfigError(msg);
  }

  const OcrOutput<T> ocr = ocr_forward(x, params, cfg);

  const Tensor<T> keys = pixel_rows(x);
  const Tensor<T> values = pixel_rows(ocr.pixels);
  const DecoderOutput<T> dec =
      decoder_cross_attention(keys, QuerySet<T>{*mapping.category_queries}, mapping.decoder_scale, values);
  const Tensor<T> q = transpose(transform_forward(*mapping.query_proj, as_matrix(ocr.pixels)));
  const Tensor<T> k = transpose(transform_forward(*mapping.key_proj, transpose(dec.region_reps)));
  const Tensor<T> v = transpose(transform_forward(*mapping.value_proj, transpose(dec.region_reps)));
  const Tensor<T> y_tr = encoder_cross_attention(q, k, v, *mapping.ffn, mapping.encoder_scale);  // [N x mid]

  EquivalenceReport rep;
  rep.tolerance = tolerance;
  rep.ocr_scale = cfg.scale();
  rep.transformer_scale = mapping.encoder_scale;
  rep.scale_mismatch = std::abs(rep.ocr_scale - rep.transformer_scale) > 1e-15 * std::max(1.0, rep.ocr_scale);
  const std::size_t mid = ocr.y.dim(0), N = ocr.y.numel() / mid;
  auto yo = ocr.y.data();
  auto yt = y_tr.data();
  double worst = 0.0;
  for (std::size_t c = 0; c < mid; ++c)
    for (std::size_t i = 0; i < N; ++i)
      worst = std::max(worst, std::abs(static_cast<double>(yo[c * N + i]) - static_cast<double>(yt[i * mid + c])));
  rep.max_abs_discrepancy = worst;
  rep.passed = worst <= tolerance;
  if (rep.passed) {
    rep.message = "transformer and OCR paths agree";
  } else if (rep.scale_mismatch) {
    rep.message = "scale mismatch: OCR relation scale " + std::to_string(rep.ocr_scale) + " vs encoder attention scale " +
                  std::to_string(rep.transformer_scale);
  } else {
    rep.message = "paths disagree beyond tolerance";
  }
  return rep;
}

}  // namespace ocrseg
