#include "metapix/metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace metapix {

namespace {

void require_same_image_shape(const TensorF& a, const TensorF& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace

double mse(const TensorF& a, const TensorF& b) {
  require_same_image_shape(a, b, "mse");
  const Eigen::ArrayXd diff = 255.0 * (a.data().cast<double>() - b.data().cast<double>()).array();
  return diff.square().mean();
}

double psnr_from_mse(double mse_value, double max_value) {
  if (mse_value < 0) throw std::invalid_argument("psnr: negative mse");
  if (mse_value == 0) return kPsnrCap;
  return 10.0 * std::log10(max_value * max_value / mse_value);
}

double psnr(const TensorF& a, const TensorF& b, double max_value) { return psnr_from_mse(mse(a, b), max_value); }

Eigen::MatrixXd luma255(const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("luma expects a 3 x H x W image, got " + shape_str(image.shape()));
  }
  const Index h = image.dim(1), w = image.dim(2), plane = h * w;
  Eigen::MatrixXd out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Index i = y * w + x;
      out(y, x) = 255.0 * (0.299 * image[i] + 0.587 * image[plane + i] + 0.114 * image[2 * plane + i]);
    }
  return out;
}

double ssim(const TensorF& a, const TensorF& b) {
  require_same_image_shape(a, b, "ssim");
  return ssim_plane(luma255(a), luma255(b));
}

TensorF to_unit_range(const TensorF& generated) {
  TensorF out(generated.shape(), ((generated.data().array() + 1.0f) * 0.5f).matrix());
  return out;
}

double coherence_of_frames(const std::vector<TensorF>& frames,
                           const std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>>& figure_masks) {
  if (frames.empty() || frames.size() != figure_masks.size()) {
    throw std::invalid_argument("coherence needs one figure mask per frame");
  }
  const Index channels = frames.front().dim(0);
  const Index plane = frames.front().dim(1) * frames.front().dim(2);
  Eigen::Array<bool, Eigen::Dynamic, 1> background = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(plane, true);
  for (const auto& m : figure_masks) {
    if (m.size() != plane) throw std::invalid_argument("coherence: mask size does not match frames");
    background = background && !m;
  }
  const Index n_bg = background.count();
  if (n_bg == 0) throw std::invalid_argument("coherence: no pixel is background in every frame");

  const double n = double(frames.size());
  const Eigen::ArrayXd origin = frames.front().data().cast<double>().array();
  Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(channels * plane);
  for (const auto& f : frames) {
    if (f.size() != channels * plane) throw std::invalid_argument("coherence: frame shapes differ");
    mean += f.data().cast<double>().array() - origin;
  }
  mean /= n;
  Eigen::ArrayXd var = Eigen::ArrayXd::Zero(channels * plane);
  for (const auto& f : frames) var += (f.data().cast<double>().array() - origin - mean).square();
  var /= n;

  double total = 0;
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < plane; ++i)
      if (background[i]) total += var[c * plane + i];
  return total / double(n_bg * channels);
}

double coherence_score(const ParamSetF& gen, const GeneratorConfig& config, const std::vector<TensorF>& heatmaps,
                       const std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>>& figure_masks) {
  if (heatmaps.empty()) throw std::invalid_argument("coherence needs at least one heatmap");
  std::vector<TensorF> frames;
  frames.reserve(heatmaps.size());
  for (const TensorF& hm : heatmaps) {
    Shape batch{1};
    batch.insert(batch.end(), hm.shape().begin(), hm.shape().end());
    const TensorF out = generate(gen, config, hm.reshaped(batch));
    frames.push_back(to_unit_range(out.reshaped({out.dim(1), out.dim(2), out.dim(3)})));
  }
  return coherence_of_frames(frames, figure_masks);
}

}  // namespace metapix
