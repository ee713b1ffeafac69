#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "facl/rng.hpp"
#include "facl/tensor.hpp"

namespace facl {

/// 8-bit CHW image.
struct Image {
  std::size_t c = 3, h = 0, w = 0;
  std::vector<std::uint8_t> pix;

  Image() = default;
  Image(std::size_t ch, std::size_t hh, std::size_t ww) : c(ch), h(hh), w(ww), pix(ch * hh * ww) {}

  std::uint8_t& at(std::size_t ci, std::size_t y, std::size_t x) {
    return pix[(ci * h + y) * w + x];
  }
  std::uint8_t at(std::size_t ci, std::size_t y, std::size_t x) const {
    return pix[(ci * h + y) * w + x];
  }
};

inline std::uint8_t clamp_u8(double v) {
  const long long r = std::llround(v);
  return static_cast<std::uint8_t>(std::min<long long>(255, std::max<long long>(0, r)));
}

// ---- single transforms ----

/// Bilinear resample of a source rectangle onto a dst-sized image.
inline Image resize_bilinear(const Image& src, double y0, double x0, double rh, double rw,
                             std::size_t dh, std::size_t dw) {
  Image dst(src.c, dh, dw);
  for (std::size_t ci = 0; ci < src.c; ++ci)
    for (std::size_t y = 0; y < dh; ++y)
      for (std::size_t x = 0; x < dw; ++x) {
        const double sy = y0 + (dh > 1 ? (static_cast<double>(y) / (dh - 1)) * (rh - 1) : 0.0);
        const double sx = x0 + (dw > 1 ? (static_cast<double>(x) / (dw - 1)) * (rw - 1) : 0.0);
        const std::size_t iy = static_cast<std::size_t>(std::min(sy, static_cast<double>(src.h - 1)));
        const std::size_t ix = static_cast<std::size_t>(std::min(sx, static_cast<double>(src.w - 1)));
        const std::size_t iy1 = std::min(iy + 1, src.h - 1);
        const std::size_t ix1 = std::min(ix + 1, src.w - 1);
        const double fy = sy - static_cast<double>(iy), fx = sx - static_cast<double>(ix);
        const double v = (1 - fy) * (1 - fx) * src.at(ci, iy, ix) +
                         (1 - fy) * fx * src.at(ci, iy, ix1) +
                         fy * (1 - fx) * src.at(ci, iy1, ix) + fy * fx * src.at(ci, iy1, ix1);
        dst.at(ci, y, x) = clamp_u8(v);
      }
  return dst;
}

/// Samples area in [area_min, area_max] and aspect in [3/4, 4/3]; falls back
/// to a full center crop after 10 degenerate attempts.
inline Image random_resized_crop(const Image& img, double area_min, double area_max, Rng& rng) {
  const double full = static_cast<double>(img.h * img.w);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = full * rng.uniform(area_min, area_max);
    const double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const double cw = std::round(std::sqrt(target * aspect));
    const double ch = std::round(std::sqrt(target / aspect));
    if (cw < 1 || ch < 1 || cw > img.w || ch > img.h) continue;
    const std::size_t x0 = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(img.w - cw) + 1));
    const std::size_t y0 = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(img.h - ch) + 1));
    return resize_bilinear(img, static_cast<double>(y0), static_cast<double>(x0), ch, cw, img.h,
                           img.w);
  }
  return resize_bilinear(img, 0.0, 0.0, static_cast<double>(img.h), static_cast<double>(img.w),
                         img.h, img.w);
}

inline Image hflip(const Image& img) {
  Image out = img;
  for (std::size_t ci = 0; ci < img.c; ++ci)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) out.at(ci, y, x) = img.at(ci, y, img.w - 1 - x);
  return out;
}

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline Image grayscale(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      const std::uint8_t g = clamp_u8(luma(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)));
      for (std::size_t ci = 0; ci < img.c; ++ci) out.at(ci, y, x) = g;
    }
  return out;
}

inline Image solarize(const Image& img) {
  Image out = img;
  for (std::uint8_t& p : out.pix) p = p >= 128 ? static_cast<std::uint8_t>(255 - p) : p;
  return out;
}

namespace detail_img {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx == 0.0 ? 0.0 : d / mx;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(hh);
  const double f = hh - i;
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace detail_img

/// Brightness/contrast/saturation factors in [1-strength, 1+strength] and a
/// hue rotation in [-hue, hue], applied in a random order.
inline Image color_jitter(const Image& img, double strength, double hue, Rng& rng) {
  const double fb = rng.uniform(1.0 - strength, 1.0 + strength);
  const double fc = rng.uniform(1.0 - strength, 1.0 + strength);
  const double fs = rng.uniform(1.0 - strength, 1.0 + strength);
  const double fh = rng.uniform(-hue, hue);
  std::vector<int> order{0, 1, 2, 3};
  rng.shuffle(order);

  Image out = img;
  for (int op : order) {
    if (op == 0) {  // brightness
      for (std::uint8_t& p : out.pix) p = clamp_u8(p * fb);
    } else if (op == 1) {  // contrast around the mean gray level
      double mean = 0.0;
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x)
          mean += luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
      mean /= static_cast<double>(out.h * out.w);
      for (std::uint8_t& p : out.pix) p = clamp_u8(mean + (p - mean) * fc);
    } else if (op == 2) {  // saturation toward per-pixel gray
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x) {
          const double g = luma(out.at(0, y, x), out.at(1, y, x), out.at(2, y, x));
          for (std::size_t ci = 0; ci < out.c; ++ci)
            out.at(ci, y, x) = clamp_u8(g + (out.at(ci, y, x) - g) * fs);
        }
    } else {  // hue rotation through HSV
      for (std::size_t y = 0; y < out.h; ++y)
        for (std::size_t x = 0; x < out.w; ++x) {
          double h, s, v, r, g, b;
          detail_img::rgb_to_hsv(out.at(0, y, x) / 255.0, out.at(1, y, x) / 255.0,
                                 out.at(2, y, x) / 255.0, h, s, v);
          h = std::fmod(h + fh + 1.0, 1.0);
          detail_img::hsv_to_rgb(h, s, v, r, g, b);
          out.at(0, y, x) = clamp_u8(r * 255.0);
          out.at(1, y, x) = clamp_u8(g * 255.0);
          out.at(2, y, x) = clamp_u8(b * 255.0);
        }
    }
  }
  return out;
}

/// Separable Gaussian, kernel size = h/10 rounded up to odd, replicate edges.
inline Image gaussian_blur(const Image& img, double sigma) {
  std::size_t ks = (img.h + 9) / 10;
  if (ks % 2 == 0) ++ks;
  const std::size_t r = ks / 2;
  std::vector<double> kern(ks);
  double sum = 0.0;
  for (std::size_t i = 0; i < ks; ++i) {
    const double dx = static_cast<double>(i) - static_cast<double>(r);
    kern[i] = std::exp(-dx * dx / (2.0 * sigma * sigma));
    sum += kern[i];
  }
  for (double& kv : kern) kv /= sum;

  const auto clampi = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(std::max<std::ptrdiff_t>(v, 0), n - 1));
  };
  Image tmp = img, out = img;
  for (std::size_t ci = 0; ci < img.c; ++ci)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < ks; ++i)
          acc += kern[i] * img.at(ci, y, clampi(static_cast<std::ptrdiff_t>(x + i) - r, img.w));
        tmp.at(ci, y, x) = clamp_u8(acc);
      }
  for (std::size_t ci = 0; ci < img.c; ++ci)
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < ks; ++i)
          acc += kern[i] * tmp.at(ci, clampi(static_cast<std::ptrdiff_t>(y + i) - r, img.h), x);
        out.at(ci, y, x) = clamp_u8(acc);
      }
  return out;
}

// ---- pipelines ----

enum class DaSetting { SymmWeak, SymmStrong, AsymmStrong };

inline DaSetting da_setting_from(const std::string& s) {
  if (s == "symm_weak") return DaSetting::SymmWeak;
  if (s == "symm_strong") return DaSetting::SymmStrong;
  if (s == "asymm_strong") return DaSetting::AsymmStrong;
  throw std::invalid_argument("unknown da setting: " + s);
}

struct ImgPipelineCfg {
  double crop_prob = 1.0;
  double crop_area_min = 0.2, crop_area_max = 1.0;
  double flip_prob = 0.5;
  double jitter_prob = 0.8, jitter_strength = 0.4, jitter_hue = 0.1;
  double gray_prob = 0.2;
  double blur_prob = 0.0, blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double solarize_prob = 0.0;

  bool operator==(const ImgPipelineCfg&) const = default;
};

/// The two view pipelines for a setting: weak removes blur and solarization
/// everywhere, strong keeps them on both sides, asymm differs per branch.
inline std::pair<ImgPipelineCfg, ImgPipelineCfg> make_pipeline(DaSetting setting,
                                                               ImgPipelineCfg base = {}) {
  ImgPipelineCfg anchor = base, positive = base;
  switch (setting) {
    case DaSetting::SymmWeak:
      anchor.blur_prob = positive.blur_prob = 0.0;
      anchor.solarize_prob = positive.solarize_prob = 0.0;
      break;
    case DaSetting::SymmStrong:
      anchor.blur_prob = positive.blur_prob = 0.5;
      anchor.solarize_prob = positive.solarize_prob = 0.1;
      break;
    case DaSetting::AsymmStrong:
      anchor.blur_prob = 1.0;
      anchor.solarize_prob = 0.0;
      positive.blur_prob = 0.1;
      positive.solarize_prob = 0.2;
      break;
  }
  return {anchor, positive};
}

inline Image apply_pipeline(const ImgPipelineCfg& cfg, const Image& img, Rng& rng) {
  Image out = rng.uniform() < cfg.crop_prob
                  ? random_resized_crop(img, cfg.crop_area_min, cfg.crop_area_max, rng)
                  : resize_bilinear(img, 0.0, 0.0, static_cast<double>(img.h),
                                    static_cast<double>(img.w), img.h, img.w);
  if (rng.uniform() < cfg.flip_prob) out = hflip(out);
  if (rng.uniform() < cfg.jitter_prob) out = color_jitter(out, cfg.jitter_strength, cfg.jitter_hue, rng);
  if (rng.uniform() < cfg.gray_prob) out = grayscale(out);
  if (rng.uniform() < cfg.blur_prob)
    out = gaussian_blur(out, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
  if (rng.uniform() < cfg.solarize_prob) out = solarize(out);
  return out;
}

/// u8 [0,255] -> value/255 -> per-channel standardization.
inline void image_to_rows(const std::vector<Image>& batch, Tensor& out,
                          const std::array<double, 3>& mean, const std::array<double, 3>& sd) {
  const std::size_t b = batch.size();
  require(b > 0, "image_to_rows: empty batch");
  const std::size_t c = batch[0].c, h = batch[0].h, w = batch[0].w;
  out = Tensor({b, c, h, w});
  for (std::size_t i = 0; i < b; ++i) {
    require(batch[i].c == c && batch[i].h == h && batch[i].w == w, "image_to_rows: ragged batch");
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t j = 0; j < h * w; ++j)
        out.data[(i * c + ci) * h * w + j] =
            (batch[i].pix[ci * h * w + j] / 255.0 - mean[ci]) / sd[ci];
  }
  out.quantize();
}

// ---- synthetic vectors ----

struct VectorViewCfg {
  double noise = 0.1;  // in units of per-dimension data std
  double mask_rate = 0.1;
  double scale_min = 0.9, scale_max = 1.1;
};

/// Additive per-dimension Gaussian noise, Bernoulli coordinate mask, then one
/// global scale draw.
inline void vector_view(const double* src, double* dst, std::size_t d,
                        const std::vector<double>& sigma, const VectorViewCfg& cfg, Rng& rng) {
  require(sigma.size() == d, "vector_view: sigma size mismatch");
  for (std::size_t j = 0; j < d; ++j)
    dst[j] = src[j] + (cfg.noise > 0.0 ? rng.normal(0.0, cfg.noise * sigma[j]) : 0.0);
  if (cfg.mask_rate > 0.0)
    for (std::size_t j = 0; j < d; ++j)
      if (rng.uniform() < cfg.mask_rate) dst[j] = 0.0;
  const double s =
      cfg.scale_min == cfg.scale_max ? cfg.scale_min : rng.uniform(cfg.scale_min, cfg.scale_max);
  for (std::size_t j = 0; j < d; ++j) dst[j] = stored(dst[j] * s);
}

}  // namespace facl
