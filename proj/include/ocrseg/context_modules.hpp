#pragma once

// Object-contextual aggregation and the baseline context schemes it is
// compared against: pixel-pixel self-attention, global context, the
// pixel-predicted (DA) and segmentation-map (ACF) relation schemes, and the
// lite multi-scale modules (dilated-conv pyramid, pyramid pooling).
//
// Feature maps are [C x H x W]. Relation matrices are [N x K] (pixel-region)
// or [N x N] (pixel-pixel), row-stochastic. Region sets are [K x N].

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ocrseg/transform_block.hpp"

namespace ocrseg {

enum class RelationScheme { ocr, da, acf };
enum class AttentionScale { unit, inv_sqrt_d };

const char* to_string(RelationScheme s);
RelationScheme parse_relation_scheme(const std::string& s);
const char* to_string(AttentionScale s);
AttentionScale parse_attention_scale(const std::string& s);

inline double attention_scale_value(AttentionScale s, std::size_t key_width) {
  return s == AttentionScale::unit ? 1.0 : 1.0 / std::sqrt(static_cast<double>(key_width));
}

template <typename T>
struct SoftRegionSet {
  Tensor<T> logits;      // [K x N], the maps M_k
  Tensor<T> normalized;  // [K x N], spatial softmax of each row
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<bool> empty;  // rows with no support (ground-truth regions only)

  std::size_t num_regions() const { return logits.dim(0); }
  std::size_t num_pixels() const { return logits.dim(1); }
};

template <typename T>
struct RegionReps {
  Tensor<T> reps;  // [K x C]
};

template <typename T>
struct RelationMatrix {
  Tensor<T> weights;  // [N x K] or [N x N]
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<bool> zeroed;  // pixels whose row was zeroed (ignored labels)
};

struct OcrConfig {
  std::size_t num_classes = 19;
  std::size_t in_channels = 512;
  std::size_t key_channels = 256;
  std::size_t mid_channels = 512;
  // Output width of the optional 3x3 conv feeding pixel features; 0 = off.
  std::size_t stem_channels = 0;
  AttentionScale attention_scale = AttentionScale::unit;
  RelationScheme relation_scheme = RelationScheme::ocr;
  // Region count for the DA scheme; 0 means num_classes. When it differs from
  // num_classes the regions come from a separate unsupervised 1x1 former.
  std::size_t da_regions = 0;

  void validate() const;
  std::size_t pixel_channels() const { return stem_channels ? stem_channels : in_channels; }
  std::size_t effective_da_regions() const { return da_regions ? da_regions : num_classes; }
  double scale() const { return attention_scale_value(attention_scale, key_channels); }
};

template <typename T>
struct OcrParams {
  Tensor<T> classifier;  // [K x C_in], soft-region head (no bias)
  std::optional<ConvBlock<T>> stem;
  std::optional<TransformBlock<T>> phi;  // pixel -> key, OCR relation scheme only
  std::optional<TransformBlock<T>> psi;  // region -> key, OCR relation scheme only
  TransformBlock<T> delta;  // region -> key
  TransformBlock<T> rho;    // key -> mid
  TransformBlock<T> g;      // [pixel; context] -> mid
  std::optional<Tensor<T>> da_predictor;      // [R x C'], DA scheme only
  std::optional<Tensor<T>> da_region_former;  // [R x C_in], DA scheme with R != K

  static OcrParams init(const OcrConfig& cfg, Rng& rng) {
    cfg.validate();
    OcrParams p;
    const std::size_t cp = cfg.pixel_channels();
    p.classifier = init_uniform<T>(Shape{cfg.num_classes, cfg.in_channels}, cfg.in_channels, rng);
    if (cfg.stem_channels) p.stem = ConvBlock<T>::init(cfg.in_channels, cfg.stem_channels, 3, rng);
    if (cfg.relation_scheme == RelationScheme::ocr) {
      p.phi = TransformBlock<T>::init(cp, cfg.key_channels, rng);
      p.psi = TransformBlock<T>::init(cp, cfg.key_channels, rng);
    }
    p.delta = TransformBlock<T>::init(cp, cfg.key_channels, rng);
    p.rho = TransformBlock<T>::init(cfg.key_channels, cfg.mid_channels, rng);
    p.g = TransformBlock<T>::init(cp + cfg.mid_channels, cfg.mid_channels, rng);
    if (cfg.relation_scheme == RelationScheme::da) {
      const std::size_t r = cfg.effective_da_regions();
      p.da_predictor = init_uniform<T>(Shape{r, cp}, cp, rng);
      if (r != cfg.num_classes) p.da_region_former = init_uniform<T>(Shape{r, cfg.in_channels}, cfg.in_channels, rng);
    }
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "classifier", classifier, true);
    if (stem) stem->visit(prefix + "stem", f);
    if (phi) phi->visit(prefix + "phi", f);
    if (psi) psi->visit(prefix + "psi", f);
    delta.visit(prefix + "delta", f);
    rho.visit(prefix + "rho", f);
    g.visit(prefix + "g", f);
    if (da_predictor) f(prefix + "da_predictor", *da_predictor, true);
    if (da_region_former) f(prefix + "da_region_former", *da_region_former, true);
  }
};

namespace detail {

template <typename T>
void require_feature_map(const Tensor<T>& x, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected [C x H x W] feature map, got " + shape_str(x.shape()));
  if (!all_finite(x)) throw DataError(std::string(op) + ": non-finite input");
}

template <typename T>
T temperature_for(double scale, const char* op) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ParameterError(std::string(op) + ": attention scale must be positive, got " + std::to_string(scale));
  }
  return static_cast<T>(1.0 / scale);
}

}  // namespace detail

// Coarse soft segmentation: logits = classifier * x, normalised by a
// spatial softmax over the N pixels of each region row.
template <typename T>
SoftRegionSet<T> compute_soft_regions(const Tensor<T>& x, const Tensor<T>& classifier) {
  detail::require_feature_map(x, "compute_soft_regions");
  if (classifier.rank() != 2 || classifier.dim(0) == 0) throw ConfigError("compute_soft_regions: need K >= 1 regions");
  SoftRegionSet<T> r;
  r.logits = conv1x1(as_matrix(x), classifier);
  r.normalized = softmax_rows(r.logits);
  r.height = x.dim(1);
  r.width = x.dim(2);
  r.empty.assign(r.logits.dim(0), false);
  return r;
}

// f_k = sum_i m_ki x_i, i.e. normalized [K x N] times pixels [N x C].
template <typename T>
RegionReps<T> region_representations(const Tensor<T>& x_pixels, const SoftRegionSet<T>& regions) {
  detail::require_rank(x_pixels, 2, "region_representations");
  if (x_pixels.dim(0) != regions.num_pixels()) {
    throw DimensionError("region_representations: " + std::to_string(x_pixels.dim(0)) + " pixel rows vs regions over " +
                         std::to_string(regions.num_pixels()) + " pixels");
  }
  return {matmul(regions.normalized, x_pixels)};
}

// Pixel features [C x H x W] as the [N x C] matrix consumed by region_representations.
template <typename T>
Tensor<T> pixel_rows(const Tensor<T>& x) {
  return transpose(as_matrix(x));
}

// w_ik = softmax_k(scale * phi(x_i)^T psi(f_k)).
template <typename T>
RelationMatrix<T> pixel_region_relations(const Tensor<T>& x, const RegionReps<T>& reps, const TransformBlock<T>& phi,
                                         const TransformBlock<T>& psi, double scale) {
  detail::require_feature_map(x, "pixel_region_relations");
  const T temp = detail::temperature_for<T>(scale, "pixel_region_relations");
  if (phi.out_channels() != psi.out_channels()) {
    throw DimensionError("pixel_region_relations: phi outputs " + std::to_string(phi.out_channels()) +
                         " channels but psi outputs " + std::to_string(psi.out_channels()));
  }
  Tensor<T> q = transform_forward(phi, as_matrix(x));              // [d x N]
  Tensor<T> k = transform_forward(psi, transpose(reps.reps));      // [d x K]
  Tensor<T> logits = matmul(transpose(q), k);                      // [N x K]
  return {softmax_rows(logits, temp), x.dim(1), x.dim(2), {}};
}

// y_i = rho(sum_k w_ik delta(f_k)), returned as [C_out x H x W].
template <typename T>
Tensor<T> ocr_aggregate(const RelationMatrix<T>& relations, const RegionReps<T>& reps, const TransformBlock<T>& delta,
                        const TransformBlock<T>& rho) {
  const std::size_t K = reps.reps.dim(0);
  if (relations.weights.dim(1) != K) {
    throw DimensionError("ocr_aggregate: relations over " + std::to_string(relations.weights.dim(1)) +
                         " regions but " + std::to_string(K) + " region representations");
  }
  const std::size_t N = relations.weights.dim(0);
  if (relations.height * relations.width != N) throw DimensionError("ocr_aggregate: relation spatial size unset");
  Tensor<T> values = transform_forward(delta, transpose(reps.reps));  // [d x K]
  Tensor<T> context = matmul(values, transpose(relations.weights));  // [d x N]
  Tensor<T> y = transform_forward(rho, context);
  return reshape(y, Shape{y.dim(0), relations.height, relations.width});
}

// z_i = g([x_i; y_i]).
template <typename T>
Tensor<T> augment(const Tensor<T>& x, const Tensor<T>& y, const TransformBlock<T>& g) {
  detail::require_rank(x, 3, "augment");
  detail::require_rank(y, 3, "augment");
  if (x.dim(1) != y.dim(1) || x.dim(2) != y.dim(2)) {
    throw DimensionError("augment: spatial mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  return transform_forward(g, concat_rows(std::vector<Tensor<T>>{x, y}));
}

// DA scheme: w_ik = softmax_k(predictor(x_i)); regions are never consulted.
template <typename T>
RelationMatrix<T> da_scheme_relations(const Tensor<T>& x, std::size_t K, const Tensor<T>& predictor) {
  detail::require_feature_map(x, "da_scheme_relations");
  if (predictor.rank() != 2 || predictor.dim(0) != K) {
    throw DimensionError("da_scheme_relations: predictor " + shape_str(predictor.shape()) + " does not output " +
                         std::to_string(K) + " regions");
  }
  Tensor<T> logits = conv1x1(as_matrix(x), predictor);  // [K x N]
  return {softmax_rows(transpose(logits)), x.dim(1), x.dim(2), {}};
}

// ACF scheme: the coarse segmentation posterior per pixel is the relation.
template <typename T>
RelationMatrix<T> acf_scheme_relations(const SoftRegionSet<T>& regions) {
  return {softmax_rows(transpose(regions.logits)), regions.height, regions.width, {}};
}

template <typename T>
struct OcrOutput {
  Tensor<T> z;                  // augmented representation [mid x H x W]
  Tensor<T> y;                  // object-contextual representation [mid x H x W]
  Tensor<T> pixels;             // pixel features the context head used [C' x H x W]
  SoftRegionSet<T> regions;     // class regions (auxiliary supervision target)
  SoftRegionSet<T> context_regions;  // regions aggregated into f_k
  RegionReps<T> reps;
  RelationMatrix<T> relations;
};

// Soft regions -> region representations -> relations -> aggregation -> augmentation.
template <typename T>
OcrOutput<T> ocr_forward(const Tensor<T>& x, const OcrParams<T>& p, const OcrConfig& cfg) {
  detail::require_feature_map(x, "ocr_forward");
  if (x.dim(0) != cfg.in_channels) {
    throw DimensionError("ocr_forward: input has " + std::to_string(x.dim(0)) + " channels, config expects " +
                         std::to_string(cfg.in_channels));
  }
  OcrOutput<T> out;
  out.regions = compute_soft_regions(x, p.classifier);
  out.pixels = p.stem ? conv_block_forward(*p.stem, x) : x;
  out.context_regions = out.regions;
  if (cfg.relation_scheme == RelationScheme::da && p.da_region_former) {
    out.context_regions = compute_soft_regions(x, *p.da_region_former);
  }
  out.reps = region_representations(pixel_rows(out.pixels), out.context_regions);
  switch (cfg.relation_scheme) {
    case RelationScheme::ocr:
      if (!p.phi || !p.psi) throw ConfigError("ocr_forward: OCR relation scheme needs phi and psi");
      out.relations = pixel_region_relations(out.pixels, out.reps, *p.phi, *p.psi, cfg.scale());
      break;
    case RelationScheme::da:
      if (!p.da_predictor) throw ConfigError("ocr_forward: DA scheme needs a relation predictor");
      out.relations = da_scheme_relations(out.pixels, out.context_regions.num_regions(), *p.da_predictor);
      break;
    case RelationScheme::acf:
      out.relations = acf_scheme_relations(out.regions);
      break;
  }
  out.y = ocr_aggregate(out.relations, out.reps, p.delta, p.rho);
  out.z = augment(out.pixels, out.y, p.g);
  return out;
}

// Pixel-pixel relational context: y_i = rho(sum_s w_is delta(x_s)) with
// w_is = softmax_s(scale * phi(x_i)^T psi(x_s)).
template <typename T>
Tensor<T> self_attention_context(const Tensor<T>& x, const TransformBlock<T>& phi, const TransformBlock<T>& psi,
                                 const TransformBlock<T>& delta, const TransformBlock<T>& rho, double scale) {
  detail::require_feature_map(x, "self_attention_context");
  const T temp = detail::temperature_for<T>(scale, "self_attention_context");
  if (phi.out_channels() != psi.out_channels()) throw DimensionError("self_attention_context: phi/psi width mismatch");
  const Tensor<T> xm = as_matrix(x);
  Tensor<T> q = transform_forward(phi, xm);  // [d x N]
  Tensor<T> k = transform_forward(psi, xm);  // [d x N]
  Tensor<T> w = softmax_rows(matmul(transpose(q), k), temp);  // [N x N]
  Tensor<T> v = transform_forward(delta, xm);                 // [d x N]
  Tensor<T> context = matmul(v, transpose(w));                // [d x N]
  Tensor<T> y = transform_forward(rho, context);
  return reshape(y, Shape{y.dim(0), x.dim(1), x.dim(2)});
}

// Relation matrix of the self-attention scheme, exposed for property checks.
template <typename T>
RelationMatrix<T> self_attention_relations(const Tensor<T>& x, const TransformBlock<T>& phi,
                                           const TransformBlock<T>& psi, double scale) {
  detail::require_feature_map(x, "self_attention_relations");
  const T temp = detail::temperature_for<T>(scale, "self_attention_relations");
  const Tensor<T> xm = as_matrix(x);
  Tensor<T> q = transform_forward(phi, xm);
  Tensor<T> k = transform_forward(psi, xm);
  return {softmax_rows(matmul(transpose(q), k), temp), x.dim(1), x.dim(2), {}};
}

// w_is = 1/N for every pixel pair.
template <typename T>
Tensor<T> global_context(const Tensor<T>& x, const TransformBlock<T>& delta, const TransformBlock<T>& rho) {
  detail::require_feature_map(x, "global_context");
  Tensor<T> pooled = mean_cols(transform_forward(delta, as_matrix(x)));  // [d x 1]
  Tensor<T> y = transform_forward(rho, pooled);
  return reshape(tile_cols(y, x.dim(1) * x.dim(2)), Shape{y.dim(0), x.dim(1), x.dim(2)});
}

template <typename T>
struct DilatedConvSpec {
  std::size_t kernel_size = 3;
  std::vector<std::size_t> rates;
  std::vector<Tensor<T>> kernels;  // one [O x C x k x k] per rate

  void validate(std::size_t in_channels) const {
    if (kernel_size % 2 == 0) throw ConfigError("dilated conv: kernel size must be odd, got " + std::to_string(kernel_size));
    if (rates.empty()) throw ConfigError("dilated conv: at least one rate required");
    if (kernels.size() != rates.size()) throw ConfigError("dilated conv: one kernel per rate required");
    for (std::size_t i = 0; i < rates.size(); ++i) {
      if (rates[i] < 1) throw ConfigError("dilated conv: rates must be >= 1");
      const auto& k = kernels[i];
      if (k.rank() != 4 || k.dim(1) != in_channels || k.dim(2) != kernel_size || k.dim(3) != kernel_size) {
        throw DimensionError("dilated conv: kernel " + shape_str(k.shape()) + " does not match input channels " +
                             std::to_string(in_channels) + " and kernel size " + std::to_string(kernel_size));
      }
    }
  }

  static DilatedConvSpec init(std::size_t c_in, std::size_t c_out, std::vector<std::size_t> rates, Rng& rng,
                              std::size_t kernel_size = 3) {
    DilatedConvSpec s;
    s.kernel_size = kernel_size;
    s.rates = std::move(rates);
    for (std::size_t i = 0; i < s.rates.size(); ++i) {
      s.kernels.push_back(init_uniform<T>(Shape{c_out, c_in, kernel_size, kernel_size}, c_in * kernel_size * kernel_size, rng));
    }
    return s;
  }
};

// Concatenation over rates of zero-padded dilated convolutions of x.
template <typename T>
Tensor<T> aspp_lite(const Tensor<T>& x, const DilatedConvSpec<T>& spec) {
  detail::require_feature_map(x, "aspp_lite");
  spec.validate(x.dim(0));
  std::vector<Tensor<T>> branches;
  for (std::size_t i = 0; i < spec.rates.size(); ++i) branches.push_back(conv2d(x, spec.kernels[i], spec.rates[i]));
  return concat_rows(branches);
}

// [x; up(conv_b(pool_b(x))) for each bin b].
template <typename T>
Tensor<T> ppm_lite(const Tensor<T>& x, const std::vector<std::size_t>& bins, const std::vector<Tensor<T>>& convs) {
  detail::require_feature_map(x, "ppm_lite");
  if (bins.empty() || bins.size() != convs.size()) throw ConfigError("ppm_lite: need one 1x1 conv per bin");
  const std::size_t H = x.dim(1), W = x.dim(2);
  std::vector<Tensor<T>> parts{x};
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] == 0 || bins[i] > std::min(H, W)) {
      throw ConfigError("ppm_lite: bin " + std::to_string(bins[i]) + " does not fit a " + std::to_string(H) + "x" +
                        std::to_string(W) + " map");
    }
    Tensor<T> pooled = adaptive_avg_pool(x, bins[i]);
    Tensor<T> branch = conv1x1(pooled, convs[i]);
    parts.push_back(upsample_nearest(branch, H, W));
  }
  return concat_rows(parts);
}

// Rate defaults {1, 6, 12} scaled by image_size / 64 and floored at 1.
struct ScaledRates {
  std::vector<std::size_t> rates;
  bool clipped = false;  // some rate hit the floor or reaches past the image
};
ScaledRates scaled_aspp_rates(std::size_t image_size, const std::vector<std::size_t>& base = {1, 6, 12});

inline const std::vector<std::size_t>& default_ppm_bins() {
  static const std::vector<std::size_t> bins{1, 2, 3, 6};
  return bins;
}

}  // namespace ocrseg
