#pragma once

#include "metapix/models.hpp"
#include "metapix/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace metapix {

inline constexpr double kPsnrCap = 99.0;

/// Averages over a set of test frames. MSE is on the 0-255 scale.
struct MetricsReport {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double coherence = 0.0;       // generator after personalization
  double coherence_init = 0.0;  // generator before personalization
  int n_frames = 0;
  std::vector<double> frame_mse;
  std::vector<double> frame_psnr;
  std::vector<double> frame_ssim;
};

/// Mean over pixels and channels of (255 a - 255 b)^2 for images in [0, 1].
double mse(const TensorF& a, const TensorF& b);

/// 10 log10(max^2 / mse), capped at 99 dB when the images are identical.
double psnr_from_mse(double mse_value, double max_value = 255.0);
double psnr(const TensorF& a, const TensorF& b, double max_value = 255.0);

/// ITU-R 601 luma of a 3 x H x W image in [0, 1], on the 0-255 scale.
Eigen::MatrixXd luma255(const TensorF& image);

/// Mean structural similarity of two luma planes (0-255 scale) using an
/// 11x11 Gaussian window (sigma 1.5) over valid positions only.
template <class DerivedA, class DerivedB>
double ssim_plane(const Eigen::MatrixBase<DerivedA>& x, const Eigen::MatrixBase<DerivedB>& y) {
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw std::invalid_argument("ssim: image sizes differ");
  if (x.rows() < kWindow || x.cols() < kWindow) throw std::invalid_argument("ssim: image smaller than 11x11 window");

  Eigen::Matrix<double, kWindow, 1> taps;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2 * kSigma * kSigma));
  }
  taps /= taps.sum();

  // Separable valid-mode filtering: columns first, then rows.
  auto filter = [&](const Eigen::MatrixXd& m) {
    const Index rows = m.rows() - kWindow + 1, cols = m.cols() - kWindow + 1;
    Eigen::MatrixXd vertical = Eigen::MatrixXd::Zero(rows, m.cols());
    for (int k = 0; k < kWindow; ++k) vertical += taps[k] * m.middleRows(k, rows);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
    for (int k = 0; k < kWindow; ++k) out += taps[k] * vertical.middleCols(k, cols);
    return out;
  };
  const Eigen::MatrixXd xd = x.template cast<double>();
  const Eigen::MatrixXd yd = y.template cast<double>();
  const Eigen::ArrayXXd mu_x = filter(xd).array();
  const Eigen::ArrayXXd mu_y = filter(yd).array();
  const Eigen::ArrayXXd var_x = filter(xd.cwiseProduct(xd)).array() - mu_x.square();
  const Eigen::ArrayXXd var_y = filter(yd.cwiseProduct(yd)).array() - mu_y.square();
  const Eigen::ArrayXXd cov = filter(xd.cwiseProduct(yd)).array() - mu_x * mu_y;
  const Eigen::ArrayXXd map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) /
                              ((mu_x.square() + mu_y.square() + c1) * (var_x + var_y + c2));
  return map.mean();
}

/// SSIM of two 3 x H x W images in [0, 1], computed on luma.
double ssim(const TensorF& a, const TensorF& b);

/// Maps generator output from (-1, 1) to [0, 1].
TensorF to_unit_range(const TensorF& generated);

/// Mean per-pixel temporal variance of generated frames over the pixels that
/// are background in every pose. Lower is more coherent.
double coherence_of_frames(const std::vector<TensorF>& frames,
                           const std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>>& figure_masks);

double coherence_score(const ParamSetF& gen, const GeneratorConfig& config, const std::vector<TensorF>& heatmaps,
                       const std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>>& figure_masks);

}  // namespace metapix
