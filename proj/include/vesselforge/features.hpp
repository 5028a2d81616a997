#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "vesselforge/common.hpp"
#include "vesselforge/volume.hpp"

namespace vesselforge {

// ----------------------------------------------------------- Gaussian pyramid

struct PyramidLevel {
  int level = 0;
  VolumeGrid grid;
  double sigma_mm = 0.0;  // cumulative smoothing scale, isotropic-equivalent
};

namespace detail {

// Mirror an index into [0, n) with symmetric (edge-repeating) reflection.
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<size_t>(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

// Convolve along one axis (0=z, 1=y, 2=x) with symmetric boundary handling.
inline void convolve_axis(const Dims& d, const std::vector<float>& in, std::vector<float>& out, int axis,
                          const std::vector<double>& kernel) {
  const auto radius = static_cast<int64_t>(kernel.size() / 2);
  const int64_t n = axis == 0 ? d.nz : axis == 1 ? d.ny : d.nx;
  for (int64_t z = 0; z < d.nz; ++z) {
    for (int64_t y = 0; y < d.ny; ++y) {
      for (int64_t x = 0; x < d.nx; ++x) {
        double acc = 0.0;
        const int64_t c = axis == 0 ? z : axis == 1 ? y : x;
        for (int64_t t = -radius; t <= radius; ++t) {
          const int64_t s = reflect_index(c + t, n);
          const size_t idx = axis == 0 ? d.index(s, y, x) : axis == 1 ? d.index(z, s, x) : d.index(z, y, s);
          acc += kernel[static_cast<size_t>(t + radius)] * in[idx];
        }
        out[d.index(z, y, x)] = static_cast<float>(acc);
      }
    }
  }
}

}  // namespace detail

inline VolumeGrid gaussian_smooth(const VolumeGrid& grid, double sigma_vox) {
  if (!(sigma_vox > 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be positive");
  const auto kernel = detail::gaussian_kernel(sigma_vox);
  VolumeGrid out = grid;
  std::vector<float> tmp(grid.voxels.size());
  detail::convolve_axis(grid.dims, out.voxels, tmp, 0, kernel);
  detail::convolve_axis(grid.dims, tmp, out.voxels, 1, kernel);
  detail::convolve_axis(grid.dims, out.voxels, tmp, 2, kernel);
  out.voxels.swap(tmp);
  return out;
}

// Level 0 is the input grid itself; each further level smooths with sigma_vox
// then keeps even-index samples, so level L has dims ceil(dims / 2^L).
inline std::vector<PyramidLevel> gaussian_pyramid(const VolumeGrid& grid, int levels, double sigma_vox = 1.0) {
  if (levels < 1) throw std::invalid_argument("gaussian_pyramid: levels must be >= 1");
  const int64_t min_dim = int64_t{1} << (levels - 1);
  if (grid.dims.nz < min_dim || grid.dims.ny < min_dim || grid.dims.nx < min_dim)
    throw std::invalid_argument("gaussian_pyramid: grid too small for requested levels");

  std::vector<PyramidLevel> pyramid;
  pyramid.push_back({0, grid, 0.0});
  for (int level = 1; level < levels; ++level) {
    const VolumeGrid smoothed = gaussian_smooth(pyramid.back().grid, sigma_vox);
    const Dims sd = smoothed.dims;
    const Dims dd{(sd.nz + 1) / 2, (sd.ny + 1) / 2, (sd.nx + 1) / 2};
    const Spacing& sp = smoothed.spacing;
    VolumeGrid down(dd, Spacing{sp.dz * 2, sp.dy * 2, sp.dx * 2});
    size_t i = 0;
    for (int64_t z = 0; z < dd.nz; ++z)
      for (int64_t y = 0; y < dd.ny; ++y)
        for (int64_t x = 0; x < dd.nx; ++x, ++i) down.voxels[i] = smoothed.at(2 * z, 2 * y, 2 * x);
    const double pitch_mm = (grid.spacing.dz + grid.spacing.dy + grid.spacing.dx) / 3.0;
    const double prev_sigma = pyramid.back().sigma_mm;
    const double step_sigma = sigma_vox * static_cast<double>(int64_t{1} << (level - 1)) * pitch_mm;
    pyramid.push_back({level, std::move(down), std::hypot(prev_sigma, step_sigma)});
  }
  return pyramid;
}

// ----------------------------------------------------------- feature volumes

// Per-channel mean/std; std of 0 marks a constant channel.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  size_t channels() const { return mean.size(); }
};

// F scalars per voxel, voxel-major: values[voxel * F + channel].
struct FeatureVolume {
  Dims dims;
  Spacing spacing;
  size_t F = 0;
  std::vector<float> values;
  FeatureStats stats;  // the normalization applied to `values` (empty if raw)

  float value(size_t voxel, size_t channel) const { return values[voxel * F + channel]; }
  float& value(size_t voxel, size_t channel) { return values[voxel * F + channel]; }
};

inline FeatureStats compute_feature_stats(const std::vector<const FeatureVolume*>& volumes) {
  if (volumes.empty() || volumes[0]->F == 0) throw std::invalid_argument("compute_feature_stats: no data");
  const size_t F = volumes[0]->F;
  std::vector<double> sum(F, 0.0), sumsq(F, 0.0);
  size_t n = 0;
  for (const auto* fv : volumes) {
    if (fv->F != F) throw std::invalid_argument("compute_feature_stats: channel count mismatch");
    const size_t voxels = fv->dims.total();
    for (size_t v = 0; v < voxels; ++v) {
      for (size_t c = 0; c < F; ++c) {
        const double x = fv->values[v * F + c];
        sum[c] += x;
        sumsq[c] += x * x;
      }
    }
    n += voxels;
  }
  FeatureStats st;
  st.mean.resize(F);
  st.stddev.resize(F);
  for (size_t c = 0; c < F; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sumsq[c] / static_cast<double>(n) - st.mean[c] * st.mean[c]);
    st.stddev[c] = std::sqrt(var);
  }
  return st;
}

inline FeatureStats compute_feature_stats(const FeatureVolume& fv) { return compute_feature_stats({&fv}); }

// Z-scores every channel in place; constant channels (std 0) pass through as
// plain mean-subtraction so no division blows up.
inline void normalize_features(FeatureVolume& fv, const FeatureStats& stats) {
  if (stats.channels() != fv.F) throw std::invalid_argument("normalize_features: stats/channel mismatch");
  const size_t voxels = fv.dims.total();
  for (size_t c = 0; c < fv.F; ++c) {
    const double mean = stats.mean[c];
    const double scale = stats.stddev[c] > 0.0 ? 1.0 / stats.stddev[c] : 1.0;
    for (size_t v = 0; v < voxels; ++v) {
      fv.values[v * fv.F + c] = static_cast<float>((fv.values[v * fv.F + c] - mean) * scale);
    }
  }
  fv.stats = stats;
}

namespace detail {

// Central differences with clamped indices; spacing-aware, zero on 1-wide axes.
inline void gradient_magnitude(const VolumeGrid& g, std::vector<float>& out) {
  const Dims& d = g.dims;
  out.resize(d.total());
  size_t i = 0;
  for (int64_t z = 0; z < d.nz; ++z) {
    const int64_t zm = std::max<int64_t>(z - 1, 0), zp = std::min<int64_t>(z + 1, d.nz - 1);
    const double dz_span = static_cast<double>(zp - zm) * g.spacing.dz;
    for (int64_t y = 0; y < d.ny; ++y) {
      const int64_t ym = std::max<int64_t>(y - 1, 0), yp = std::min<int64_t>(y + 1, d.ny - 1);
      const double dy_span = static_cast<double>(yp - ym) * g.spacing.dy;
      for (int64_t x = 0; x < d.nx; ++x, ++i) {
        const int64_t xm = std::max<int64_t>(x - 1, 0), xp = std::min<int64_t>(x + 1, d.nx - 1);
        const double dx_span = static_cast<double>(xp - xm) * g.spacing.dx;
        const double gz = dz_span > 0 ? (g.at(zp, y, x) - g.at(zm, y, x)) / dz_span : 0.0;
        const double gy = dy_span > 0 ? (g.at(z, yp, x) - g.at(z, ym, x)) / dy_span : 0.0;
        const double gx = dx_span > 0 ? (g.at(z, y, xp) - g.at(z, y, xm)) / dx_span : 0.0;
        out[i] = static_cast<float>(std::sqrt(gz * gz + gy * gy + gx * gx));
      }
    }
  }
}

}  // namespace detail

// Raw (un-normalized) channels: per pyramid level, the nearest-upsampled
// intensity, then (optionally) per level the upsampled gradient magnitude.
inline FeatureVolume voxel_features_raw(const std::vector<PyramidLevel>& pyramid, bool include_gradient) {
  if (pyramid.empty()) throw std::invalid_argument("voxel_features_raw: empty pyramid");
  const Dims d0 = pyramid[0].grid.dims;
  const size_t levels = pyramid.size();
  const size_t F = levels * (include_gradient ? 2 : 1);
  FeatureVolume fv;
  fv.dims = d0;
  fv.spacing = pyramid[0].grid.spacing;
  fv.F = F;
  fv.values.resize(d0.total() * F);

  std::vector<float> grad;
  for (size_t li = 0; li < levels; ++li) {
    const VolumeGrid& lg = pyramid[li].grid;
    const int shift = pyramid[li].level;
    if (include_gradient) detail::gradient_magnitude(lg, grad);
    size_t v = 0;
    for (int64_t z = 0; z < d0.nz; ++z) {
      for (int64_t y = 0; y < d0.ny; ++y) {
        for (int64_t x = 0; x < d0.nx; ++x, ++v) {
          const size_t src = lg.dims.index(z >> shift, y >> shift, x >> shift);
          fv.values[v * F + li] = lg.voxels[src];
          if (include_gradient) fv.values[v * F + levels + li] = grad[src];
        }
      }
    }
  }
  return fv;
}

inline FeatureVolume voxel_features(const std::vector<PyramidLevel>& pyramid, bool include_gradient) {
  FeatureVolume fv = voxel_features_raw(pyramid, include_gradient);
  normalize_features(fv, compute_feature_stats(fv));
  return fv;
}

// ------------------------------------------------------------------ k-means

struct Codebook {
  size_t k = 0;
  size_t dim = 0;
  uint64_t seed = 0;
  std::vector<double> centroids;  // k * dim, row-major
  double inertia = 0.0;
  std::vector<double> inertia_history;  // assignment-step inertia per Lloyd iteration

  const double* centroid(size_t j) const { return centroids.data() + j * dim; }
};

namespace detail {

inline double sq_dist(const double* a, const float* b, size_t dim) {
  double acc = 0.0;
  for (size_t i = 0; i < dim; ++i) {
    const double diff = a[i] - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return acc;
}

inline double sq_dist(const double* a, const double* b, size_t dim) {
  double acc = 0.0;
  for (size_t i = 0; i < dim; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace detail

// Seeded k-means++ initialization followed by Lloyd iterations until the
// assignment reaches a fixpoint or max_iters. Ties go to the lowest centroid
// index; clusters that empty out keep their previous centroid.
inline Codebook kmeans_fit(const std::vector<double>& samples, size_t dim, size_t k, uint64_t seed,
                           int max_iters = 50) {
  if (dim == 0 || samples.size() % dim != 0) throw std::invalid_argument("kmeans_fit: bad sample layout");
  const size_t n = samples.size() / dim;
  if (k < 1) throw std::invalid_argument("kmeans_fit: k must be >= 1");
  if (n < k) throw std::invalid_argument("kmeans_fit: fewer samples than clusters");

  Codebook cb;
  cb.k = k;
  cb.dim = dim;
  cb.seed = seed;
  cb.centroids.resize(k * dim);
  Rng rng(seed);

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    const size_t first = static_cast<size_t>(rng.uniform_int(n));
    std::copy_n(samples.data() + first * dim, dim, cb.centroids.data());
  }
  for (size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double d = detail::sq_dist(cb.centroids.data() + (j - 1) * dim, samples.data() + i * dim, dim);
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    size_t pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = n - 1;
      for (size_t i = 0; i < n; ++i) {
        cum += d2[i];
        if (r < cum) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<size_t>(rng.uniform_int(n));
    }
    std::copy_n(samples.data() + pick * dim, dim, cb.centroids.data() + j * dim);
  }

  // Lloyd iterations.
  std::vector<size_t> assign(n, k);
  std::vector<size_t> prev_assign;
  std::vector<double> sums(k * dim);
  std::vector<size_t> counts(k);
  for (int iter = 0; iter < max_iters; ++iter) {
    prev_assign = assign;
    double inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      size_t bj = 0;
      for (size_t j = 0; j < k; ++j) {
        const double d = detail::sq_dist(cb.centroid(j), samples.data() + i * dim, dim);
        if (d < best) {
          best = d;
          bj = j;
        }
      }
      assign[i] = bj;
      inertia += best;
    }
    cb.inertia_history.push_back(inertia);
    cb.inertia = inertia;
    if (assign == prev_assign) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), size_t{0});
    for (size_t i = 0; i < n; ++i) {
      const size_t j = assign[i];
      ++counts[j];
      for (size_t c = 0; c < dim; ++c) sums[j * dim + c] += samples[i * dim + c];
    }
    for (size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (size_t c = 0; c < dim; ++c) cb.centroids[j * dim + c] = sums[j * dim + c] / static_cast<double>(counts[j]);
    }
  }
  return cb;
}

// Raw (un-normalized) centroid-distance channels appended after the input's
// channels; the input channels are copied through untouched.
inline FeatureVolume kmeans_encode_raw(const FeatureVolume& fv, const Codebook& cb) {
  if (cb.dim != fv.F) throw std::invalid_argument("kmeans_encode: codebook dimensionality mismatch");
  FeatureVolume out;
  out.dims = fv.dims;
  out.spacing = fv.spacing;
  out.F = fv.F + cb.k;
  const size_t voxels = fv.dims.total();
  out.values.resize(voxels * out.F);
  for (size_t v = 0; v < voxels; ++v) {
    const float* src = fv.values.data() + v * fv.F;
    float* dst = out.values.data() + v * out.F;
    std::copy_n(src, fv.F, dst);
    for (size_t j = 0; j < cb.k; ++j) {
      dst[fv.F + j] = static_cast<float>(std::sqrt(detail::sq_dist(cb.centroid(j), src, fv.F)));
    }
  }
  return out;
}

inline FeatureVolume kmeans_encode(const FeatureVolume& fv, const Codebook& cb) {
  FeatureVolume out = kmeans_encode_raw(fv, cb);
  FeatureStats st = compute_feature_stats(out);
  // Keep the incoming channels exactly as given; z-score only the new ones.
  for (size_t c = 0; c < fv.F; ++c) {
    st.mean[c] = 0.0;
    st.stddev[c] = 1.0;
  }
  normalize_features(out, st);
  return out;
}

// -------------------------------------------------------- JSON serialization

inline nlohmann::json codebook_to_json(const Codebook& cb) {
  nlohmann::json centroids = nlohmann::json::array();
  for (size_t j = 0; j < cb.k; ++j) {
    nlohmann::json row = nlohmann::json::array();
    for (size_t c = 0; c < cb.dim; ++c) row.push_back(cb.centroids[j * cb.dim + c]);
    centroids.push_back(std::move(row));
  }
  return {{"k", cb.k}, {"dim", cb.dim}, {"seed", cb.seed}, {"inertia", cb.inertia}, {"centroids", centroids}};
}

inline Codebook codebook_from_json(const nlohmann::json& j) {
  Codebook cb;
  cb.k = j.at("k").get<size_t>();
  cb.dim = j.at("dim").get<size_t>();
  cb.seed = j.at("seed").get<uint64_t>();
  cb.inertia = j.at("inertia").get<double>();
  const auto& rows = j.at("centroids");
  if (rows.size() != cb.k) throw std::runtime_error("codebook JSON: centroid count mismatch");
  cb.centroids.reserve(cb.k * cb.dim);
  for (const auto& row : rows) {
    if (row.size() != cb.dim) throw std::runtime_error("codebook JSON: centroid dimensionality mismatch");
    for (const auto& v : row) cb.centroids.push_back(v.get<double>());
  }
  return cb;
}

inline nlohmann::json stats_to_json(const FeatureStats& st) {
  return {{"mean", st.mean}, {"stddev", st.stddev}};
}

inline FeatureStats stats_from_json(const nlohmann::json& j) {
  FeatureStats st;
  st.mean = j.at("mean").get<std::vector<double>>();
  st.stddev = j.at("stddev").get<std::vector<double>>();
  if (st.mean.size() != st.stddev.size()) throw std::runtime_error("feature stats JSON: length mismatch");
  return st;
}

// ----------------------------------------------------------- frozen pipeline
//
// Fits normalization statistics and the codebook on the labeled scans once,
// then applies the exact same frozen transform to every scan thereafter.

struct FeatureConfig {
  int levels = 3;
  double sigma_vox = 1.0;
  bool include_gradient = true;
  size_t kmeans_k = 8;
  int kmeans_max_iters = 50;
  size_t kmeans_samples = 20000;  // training vectors drawn (with replacement)
};

class FeaturePipeline {
 public:
  FeaturePipeline() = default;

  static FeaturePipeline fit(const std::vector<const VolumeGrid*>& grids, const FeatureConfig& cfg, uint64_t seed) {
    if (grids.empty()) throw std::invalid_argument("FeaturePipeline::fit: no training grids");
    FeaturePipeline p;
    p.cfg_ = cfg;

    std::vector<FeatureVolume> raw;
    raw.reserve(grids.size());
    std::vector<const FeatureVolume*> ptrs;
    for (const auto* g : grids) {
      raw.push_back(voxel_features_raw(gaussian_pyramid(*g, cfg.levels, cfg.sigma_vox), cfg.include_gradient));
      ptrs.push_back(&raw.back());
    }
    p.base_stats_ = compute_feature_stats(ptrs);
    for (auto& fv : raw) normalize_features(fv, p.base_stats_);

    if (cfg.kmeans_k > 0) {
      const size_t F = raw[0].F;
      size_t total = 0;
      for (const auto& fv : raw) total += fv.dims.total();
      const size_t want = std::min(cfg.kmeans_samples, total);
      std::vector<double> samples;
      samples.reserve(want * F);
      Rng rng(derive_seed(seed, "kmeans-sampling"));
      for (size_t s = 0; s < want; ++s) {
        size_t pick = static_cast<size_t>(rng.uniform_int(total));
        size_t scan = 0;
        while (pick >= raw[scan].dims.total()) {
          pick -= raw[scan].dims.total();
          ++scan;
        }
        for (size_t c = 0; c < F; ++c) samples.push_back(raw[scan].values[pick * F + c]);
      }
      p.codebook_ = kmeans_fit(samples, F, cfg.kmeans_k, derive_seed(seed, "kmeans-fit"), cfg.kmeans_max_iters);

      std::vector<FeatureVolume> encoded;
      encoded.reserve(raw.size());
      std::vector<const FeatureVolume*> eptrs;
      for (const auto& fv : raw) {
        encoded.push_back(kmeans_encode_raw(fv, p.codebook_));
        eptrs.push_back(&encoded.back());
      }
      FeatureStats full = compute_feature_stats(eptrs);
      p.dist_stats_.mean.assign(full.mean.begin() + static_cast<ptrdiff_t>(raw[0].F), full.mean.end());
      p.dist_stats_.stddev.assign(full.stddev.begin() + static_cast<ptrdiff_t>(raw[0].F), full.stddev.end());
    }
    return p;
  }

  FeatureVolume transform(const VolumeGrid& grid) const {
    if (base_stats_.channels() == 0) throw std::logic_error("FeaturePipeline::transform: pipeline not fitted");
    FeatureVolume fv = voxel_features_raw(gaussian_pyramid(grid, cfg_.levels, cfg_.sigma_vox), cfg_.include_gradient);
    normalize_features(fv, base_stats_);
    if (cfg_.kmeans_k > 0) {
      FeatureVolume enc = kmeans_encode_raw(fv, codebook_);
      FeatureStats st;
      st.mean = base_stats_.mean;
      st.stddev = base_stats_.stddev;
      // Base channels are already normalized; pass them through untouched.
      for (size_t c = 0; c < fv.F; ++c) {
        st.mean[c] = 0.0;
        st.stddev[c] = 1.0;
      }
      st.mean.insert(st.mean.end(), dist_stats_.mean.begin(), dist_stats_.mean.end());
      st.stddev.insert(st.stddev.end(), dist_stats_.stddev.begin(), dist_stats_.stddev.end());
      normalize_features(enc, st);
      enc.stats = combined_stats();
      return enc;
    }
    fv.stats = base_stats_;
    return fv;
  }

  size_t feature_count() const {
    return base_stats_.channels() + (cfg_.kmeans_k > 0 ? codebook_.k : 0);
  }

  const FeatureConfig& config() const { return cfg_; }
  const Codebook& codebook() const { return codebook_; }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"levels", cfg_.levels},
                        {"sigma_vox", cfg_.sigma_vox},
                        {"include_gradient", cfg_.include_gradient},
                        {"kmeans_k", cfg_.kmeans_k},
                        {"kmeans_max_iters", cfg_.kmeans_max_iters},
                        {"kmeans_samples", cfg_.kmeans_samples},
                        {"base_stats", stats_to_json(base_stats_)}};
    if (cfg_.kmeans_k > 0) {
      j["codebook"] = codebook_to_json(codebook_);
      j["dist_stats"] = stats_to_json(dist_stats_);
    }
    return j;
  }

  static FeaturePipeline from_json(const nlohmann::json& j) {
    FeaturePipeline p;
    p.cfg_.levels = j.at("levels").get<int>();
    p.cfg_.sigma_vox = j.at("sigma_vox").get<double>();
    p.cfg_.include_gradient = j.at("include_gradient").get<bool>();
    p.cfg_.kmeans_k = j.at("kmeans_k").get<size_t>();
    p.cfg_.kmeans_max_iters = j.at("kmeans_max_iters").get<int>();
    p.cfg_.kmeans_samples = j.at("kmeans_samples").get<size_t>();
    p.base_stats_ = stats_from_json(j.at("base_stats"));
    if (p.cfg_.kmeans_k > 0) {
      p.codebook_ = codebook_from_json(j.at("codebook"));
      p.dist_stats_ = stats_from_json(j.at("dist_stats"));
    }
    return p;
  }

 private:
  FeatureStats combined_stats() const {
    FeatureStats st = base_stats_;
    st.mean.insert(st.mean.end(), dist_stats_.mean.begin(), dist_stats_.mean.end());
    st.stddev.insert(st.stddev.end(), dist_stats_.stddev.begin(), dist_stats_.stddev.end());
    return st;
  }

  FeatureConfig cfg_;
  FeatureStats base_stats_;
  Codebook codebook_;
  FeatureStats dist_stats_;
};

}  // namespace vesselforge
