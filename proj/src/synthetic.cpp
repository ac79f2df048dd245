#include "metapix/synthetic.hpp"

#include "metapix/image_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace metapix {

namespace {

using json = nlohmann::json;
constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Color random_color(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return Color(float(uniform(rng, lo, hi)), float(uniform(rng, lo, hi)), float(uniform(rng, lo, hi)));
}

Color clamp01(Color c) { return c.cwiseMax(0.0f).cwiseMin(1.0f); }

/// Smooth value noise on a 5x5 lattice, values in [-1, 1].
class ValueNoise {
 public:
  explicit ValueNoise(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (double& v : lattice_) v = uniform(rng, -1.0, 1.0);
  }

  double operator()(double u, double v) const {
    const double x = std::clamp(u, 0.0, 1.0) * (kCells - 1);
    const double y = std::clamp(v, 0.0, 1.0) * (kCells - 1);
    const int x0 = std::min(int(x), kCells - 2);
    const int y0 = std::min(int(y), kCells - 2);
    const double fx = smooth(x - x0), fy = smooth(y - y0);
    auto at = [&](int i, int j) { return lattice_[std::size_t(j * kCells + i)]; };
    const double top = at(x0, y0) * (1 - fx) + at(x0 + 1, y0) * fx;
    const double bottom = at(x0, y0 + 1) * (1 - fx) + at(x0 + 1, y0 + 1) * fx;
    return top * (1 - fy) + bottom * fy;
  }

 private:
  static constexpr int kCells = 5;
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  std::array<double, kCells * kCells> lattice_{};
};

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

/// Signed distance (negative inside) to a convex polygon given counter- or
/// clockwise; exact inside, approximate near outer corners.
double convex_signed_distance(const Eigen::Vector2d& p, const std::array<Eigen::Vector2d, 4>& quad) {
  double orientation = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = quad[i];
    const auto& b = quad[(i + 1) % 4];
    orientation += a.x() * b.y() - b.x() * a.y();
  }
  const double sign = orientation >= 0 ? 1.0 : -1.0;
  double sd = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < 4; ++i) {
    const Eigen::Vector2d a = quad[i];
    const Eigen::Vector2d e = quad[(i + 1) % 4] - a;
    const double len = e.norm();
    if (len == 0) continue;
    // Outward normal for a polygon with positive orientation is (e.y, -e.x).
    const Eigen::Vector2d n = sign * Eigen::Vector2d(e.y(), -e.x()) / len;
    sd = std::max(sd, (p - a).dot(n));
  }
  return sd;
}

void blend(TensorF& image, Index plane, Index pixel, const Color& color, float alpha) {
  if (alpha <= 0.0f) return;
  for (Index c = 0; c < 3; ++c) {
    float& v = image[c * plane + pixel];
    v = v * (1.0f - alpha) + color[c] * alpha;
  }
}

}  // namespace

Skeleton Skeleton::humanoid(int joints) {
  Skeleton s;
  const double arm_rest = kPi - 0.5;
  const double leg_rest = kPi - 0.22;
  if (joints == 8) {
    s.names = {"pelvis", "chest", "neck", "head", "l_hand", "r_hand", "l_foot", "r_foot"};
    s.parent = {-1, 0, 1, 2, 2, 2, 0, 0};
    s.bone_length = {0.12, 0.10, 0.07, 0.21, 0.21, 0.25, 0.25};
    s.rest_angle = {0.0, 0.0, 0.0, -arm_rest, arm_rest, -leg_rest, leg_rest};
  } else if (joints == 12) {
    s.names = {"pelvis", "chest", "neck",  "head",   "l_elbow", "l_hand",
               "r_elbow", "r_hand", "l_knee", "l_foot", "r_knee", "r_foot"};
    s.parent = {-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10};
    s.bone_length = {0.12, 0.10, 0.07, 0.11, 0.10, 0.11, 0.10, 0.13, 0.12, 0.13, 0.12};
    s.rest_angle = {0.0, 0.0, 0.0, -arm_rest, -0.3, arm_rest, 0.3, -leg_rest, 0.1, leg_rest, -0.1};
  } else {
    throw std::invalid_argument("humanoid skeleton supports 8 or 12 joints, got " + std::to_string(joints));
  }
  s.spine_bones = {0, 1};
  s.head_joint = 3;
  s.validate();
  return s;
}

void Skeleton::validate() const {
  const int j = joints();
  if (j < 2 || parent.empty() || parent[0] != -1) throw std::invalid_argument("skeleton root must be joint 0");
  if (int(bone_length.size()) != j - 1 || int(rest_angle.size()) != j - 1 || int(names.size()) != j) {
    throw std::invalid_argument("skeleton arrays must have J-1 bones");
  }
  for (int i = 1; i < j; ++i) {
    if (parent[std::size_t(i)] < 0 || parent[std::size_t(i)] >= i) {
      throw std::invalid_argument("skeleton parent of joint " + std::to_string(i) + " must precede it");
    }
    const double len = bone_length[std::size_t(i - 1)];
    if (!(len > 0.0 && len < 0.5)) throw std::invalid_argument("bone length outside (0, 0.5)");
  }
}

std::vector<Eigen::Vector2d> joint_positions(const Pose& pose, const Skeleton& skeleton) {
  const int j = skeleton.joints();
  if (int(pose.angles.size()) != j - 1) throw std::invalid_argument("pose angle count does not match skeleton");
  std::vector<Eigen::Vector2d> pos(static_cast<std::size_t>(j));
  std::vector<double> heading(static_cast<std::size_t>(j));
  pos[0] = pose.root;
  heading[0] = -kPi / 2;  // pelvis reference bone points up (y grows downward)
  for (int i = 1; i < j; ++i) {
    const auto p = std::size_t(skeleton.parent[std::size_t(i)]);
    heading[std::size_t(i)] = heading[p] + pose.angles[std::size_t(i - 1)];
    const double len = skeleton.bone_length[std::size_t(i - 1)];
    pos[std::size_t(i)] = pos[p] + len * Eigen::Vector2d(std::cos(heading[std::size_t(i)]),
                                                         std::sin(heading[std::size_t(i)]));
  }
  return pos;
}

Appearance sample_appearance(std::uint64_t seed, int bones) {
  std::mt19937_64 rng(derive_seed(seed, 0xA99EA7));
  Appearance a;
  a.seed = seed;
  const Color shirt = random_color(rng);
  const Color pants = random_color(rng);
  a.torso_color = shirt;
  const float skin = float(uniform(rng, 0.35, 0.95));
  a.head_color = clamp01(Color(skin, skin * 0.8f, skin * 0.65f));
  a.limb_colors.resize(std::size_t(bones));
  // Humanoid bone order ends with the leg bones (two per leg on the 12-joint figure).
  const int leg_bones = bones >= 11 ? 4 : 2;
  for (int b = 0; b < bones; ++b) {
    const Color jitter = random_color(rng, -0.08, 0.08);
    a.limb_colors[std::size_t(b)] = clamp01((b >= bones - leg_bones ? pants : shirt) + jitter);
  }
  a.limb_thickness = float(uniform(rng, 0.06, 0.09));
  a.background.color_a = random_color(rng);
  a.background.color_b = random_color(rng);
  a.background.angle = float(uniform(rng, 0.0, 2 * kPi));
  a.background.noise_amplitude = float(uniform(rng, 0.02, 0.10));
  a.background.noise_seed = rng();
  return a;
}

std::vector<Pose> pose_trajectory(std::uint64_t seed, int n_frames, const Skeleton& skeleton) {
  if (n_frames < 1) throw std::invalid_argument("pose_trajectory needs at least one frame");
  std::mt19937_64 rng(derive_seed(seed, 0x7A1EC7));
  struct Wave {
    double amp[2], freq[2], phase[2];
    double at(double t) const {
      return amp[0] * std::sin(2 * kPi * freq[0] * t + phase[0]) + amp[1] * std::sin(2 * kPi * freq[1] * t + phase[1]);
    }
  };
  auto make_wave = [&](double amp0, double amp1, double fmin, double fmax) {
    Wave w{};
    w.amp[0] = amp0 * uniform(rng, 0.5, 1.0);
    w.amp[1] = amp1 * uniform(rng, 0.5, 1.0);
    for (int k = 0; k < 2; ++k) {
      w.freq[k] = uniform(rng, fmin, fmax);
      w.phase[k] = uniform(rng, 0.0, 2 * kPi);
    }
    return w;
  };
  // |d angle / d frame| <= 2 pi (a0 f0 + a1 f1) stays well under 0.2 rad.
  std::vector<Wave> angle_waves;
  for (int b = 0; b < skeleton.bones(); ++b) {
    const bool spine = std::find(skeleton.spine_bones.begin(), skeleton.spine_bones.end(), b) !=
                       skeleton.spine_bones.end();
    const bool head = b + 1 == skeleton.head_joint;
    if (spine || head) angle_waves.push_back(make_wave(0.12, 0.06, 0.004, 0.02));
    else angle_waves.push_back(make_wave(0.55, 0.25, 0.004, 0.03));
  }
  const Wave root_x = make_wave(0.06, 0.02, 0.002, 0.012);
  const Wave root_y = make_wave(0.02, 0.01, 0.004, 0.02);

  std::vector<Pose> poses(static_cast<std::size_t>(n_frames));
  for (int t = 0; t < n_frames; ++t) {
    Pose& p = poses[std::size_t(t)];
    p.root = Eigen::Vector2d(0.5 + root_x.at(t), 0.58 + root_y.at(t));
    p.angles.resize(std::size_t(skeleton.bones()));
    for (int b = 0; b < skeleton.bones(); ++b) {
      p.angles[std::size_t(b)] = skeleton.rest_angle[std::size_t(b)] + angle_waves[std::size_t(b)].at(t);
    }
  }
  return poses;
}

TensorF render_heatmap(const Pose& pose, const Skeleton& skeleton, int height, int width, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("heatmap sigma must be positive");
  const auto joints = joint_positions(pose, skeleton);
  TensorF out({Index(joints.size()), height, width});
  const double cutoff2 = 9.0 * sigma * sigma;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const Index plane = Index(height) * width;
  for (std::size_t j = 0; j < joints.size(); ++j) {
    const double px = joints[j].x() * width - 0.5;
    const double py = joints[j].y() * height - 0.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
        if (d2 <= cutoff2) out[Index(j) * plane + Index(y) * width + x] = float(std::exp(-d2 * inv));
      }
  }
  return out;
}

RenderedFrame render(const Pose& pose, const Appearance& appearance, const Skeleton& skeleton, int height,
                     int width) {
  if (int(appearance.limb_colors.size()) != skeleton.bones()) {
    throw std::invalid_argument("appearance has " + std::to_string(appearance.limb_colors.size()) +
                                " limb colors for " + std::to_string(skeleton.bones()) + " bones");
  }
  const Index plane = Index(height) * width;
  RenderedFrame out{TensorF({3, height, width}), Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(plane, false)};
  TensorF& img = out.image;

  const Background& bg = appearance.background;
  const ValueNoise noise(bg.noise_seed);
  const Eigen::Vector2d dir(std::cos(double(bg.angle)), std::sin(double(bg.angle)));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Eigen::Vector2d uv((x + 0.5) / width, (y + 0.5) / height);
      const double t = std::clamp((uv - Eigen::Vector2d(0.5, 0.5)).dot(dir) + 0.5, 0.0, 1.0);
      const double n = bg.noise_amplitude * noise(uv.x(), uv.y());
      const Index pixel = Index(y) * width + x;
      for (Index c = 0; c < 3; ++c) {
        const double v = bg.color_a[c] * (1 - t) + bg.color_b[c] * t + n;
        img[c * plane + pixel] = float(std::clamp(v, 0.0, 1.0));
      }
    }

  const auto joints = joint_positions(pose, skeleton);
  const double scale = double(std::min(height, width));
  auto to_px = [&](const Eigen::Vector2d& p) { return Eigen::Vector2d(p.x() * width, p.y() * height); };
  auto paint = [&](const Color& color, auto&& coverage) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const float a = float(std::clamp(coverage(Eigen::Vector2d(x + 0.5, y + 0.5)), 0.0, 1.0));
        if (a <= 0.0f) continue;
        const Index pixel = Index(y) * width + x;
        blend(img, plane, pixel, color, a);
        out.figure[pixel] = true;
      }
  };

  const double half_width = 0.5 * appearance.limb_thickness * scale;
  auto is_spine = [&](int b) {
    return std::find(skeleton.spine_bones.begin(), skeleton.spine_bones.end(), b) != skeleton.spine_bones.end();
  };
  for (int b = 0; b < skeleton.bones(); ++b) {
    if (is_spine(b) || b + 1 == skeleton.head_joint) continue;
    const Eigen::Vector2d a = to_px(joints[std::size_t(skeleton.parent[std::size_t(b + 1)])]);
    const Eigen::Vector2d e = to_px(joints[std::size_t(b + 1)]);
    paint(appearance.limb_colors[std::size_t(b)],
          [&](const Eigen::Vector2d& p) { return half_width + 0.5 - segment_distance(p, a, e); });
  }

  const double torso_half = 0.065 * scale;
  for (int b : skeleton.spine_bones) {
    const Eigen::Vector2d a = to_px(joints[std::size_t(skeleton.parent[std::size_t(b + 1)])]);
    const Eigen::Vector2d e = to_px(joints[std::size_t(b + 1)]);
    const Eigen::Vector2d axis = (e - a).normalized();
    const Eigen::Vector2d side(-axis.y() * torso_half, axis.x() * torso_half);
    const std::array<Eigen::Vector2d, 4> quad{a - side, e - side, e + side, a + side};
    paint(appearance.torso_color, [&](const Eigen::Vector2d& p) { return 0.5 - convex_signed_distance(p, quad); });
  }

  if (skeleton.head_joint > 0) {
    const Eigen::Vector2d c = to_px(joints[std::size_t(skeleton.head_joint)]);
    const double radius = 0.06 * scale;
    paint(appearance.head_color, [&](const Eigen::Vector2d& p) { return radius + 0.5 - (p - c).norm(); });
  }
  return out;
}

TensorF quantize8(const TensorF& image) {
  TensorF out = image;
  for (Index i = 0; i < out.size(); ++i) {
    out[i] = float(std::lround(std::clamp(out[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return out;
}

int split_index_for(int n_frames, double split_ratio) {
  return int(std::floor(split_ratio * n_frames + 1e-9));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TaskDataset make_task(int id, std::uint64_t task_seed, int n_frames, const CorpusConfig& config,
                      const Skeleton& skeleton) {
  TaskDataset task;
  task.id = id;
  task.appearance = sample_appearance(task_seed, skeleton.bones());
  task.poses = pose_trajectory(task_seed, n_frames, skeleton);
  task.frames.reserve(std::size_t(n_frames));
  for (const Pose& p : task.poses) {
    task.frames.push_back(quantize8(render_frame(p, task.appearance, skeleton, config.height, config.width)));
  }
  task.split_index = split_index_for(n_frames, config.split_ratio);
  return task;
}

Corpus build_corpus(int n_tasks, int frames_per_task, const CorpusConfig& config) {
  if (n_tasks < 1) throw std::invalid_argument("corpus needs at least one task");
  if (frames_per_task < 1) throw std::invalid_argument("corpus needs at least one frame per task");
  if (config.height < 1 || config.height > 128 || config.width < 1 || config.width > 128) {
    throw std::invalid_argument("image size must lie in [1, 128]");
  }
  Corpus corpus;
  corpus.config = config;
  corpus.skeleton = Skeleton::humanoid(config.joints);
  for (int i = 0; i < n_tasks; ++i) {
    corpus.tasks.push_back(
        make_task(i, derive_seed(config.seed, std::uint64_t(i)), frames_per_task, config, corpus.skeleton));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json color_json(const Color& c) { return json::array({c[0], c[1], c[2]}); }
Color color_from(const json& j) { return Color(j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()); }

json appearance_json(const Appearance& a) {
  json limbs = json::array();
  for (const Color& c : a.limb_colors) limbs.push_back(color_json(c));
  return json{{"seed", a.seed},
              {"limb_colors", limbs},
              {"torso_color", color_json(a.torso_color)},
              {"head_color", color_json(a.head_color)},
              {"limb_thickness", a.limb_thickness},
              {"background",
               {{"color_a", color_json(a.background.color_a)},
                {"color_b", color_json(a.background.color_b)},
                {"angle", a.background.angle},
                {"noise_amplitude", a.background.noise_amplitude},
                {"noise_seed", a.background.noise_seed}}}};
}

Appearance appearance_from(const json& j) {
  Appearance a;
  a.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& c : j.at("limb_colors")) a.limb_colors.push_back(color_from(c));
  a.torso_color = color_from(j.at("torso_color"));
  a.head_color = color_from(j.at("head_color"));
  a.limb_thickness = j.at("limb_thickness").get<float>();
  const json& bg = j.at("background");
  a.background.color_a = color_from(bg.at("color_a"));
  a.background.color_b = color_from(bg.at("color_b"));
  a.background.angle = bg.at("angle").get<float>();
  a.background.noise_amplitude = bg.at("noise_amplitude").get<float>();
  a.background.noise_seed = bg.at("noise_seed").get<std::uint64_t>();
  return a;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  return json::parse(in);
}

std::string task_dir_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "task_%03d", id);
  return buf;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw std::runtime_error("cannot create '" + root.string() + "': " + ec.message());
  const CorpusConfig& c = corpus.config;
  json meta{{"seed", c.seed},   {"height", c.height}, {"width", c.width},
            {"joints", c.joints}, {"sigma", c.sigma},  {"split_ratio", c.split_ratio},
            {"tasks", corpus.tasks.size()},
            {"frames_per_task", corpus.tasks.empty() ? 0 : corpus.tasks.front().size()}};
  json ids = json::array();
  for (const auto& t : corpus.tasks) ids.push_back(t.id);
  meta["task_ids"] = ids;
  write_text(root / "corpus.json", meta.dump(2) + "\n");

  for (const TaskDataset& task : corpus.tasks) {
    const fs::path dir = root / task_dir_name(task.id);
    fs::create_directories(dir / "frames", ec);
    if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
    write_text(dir / "appearance.json", appearance_json(task.appearance).dump(2) + "\n");
    json poses = json::array();
    for (const Pose& p : task.poses) poses.push_back({{"root", {p.root.x(), p.root.y()}}, {"angles", p.angles}});
    write_text(dir / "poses.json", poses.dump() + "\n");
    for (int i = 0; i < task.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%04d.png", i);
      write_png(dir / "frames" / name, to_rgb8(task.frames[std::size_t(i)]));
    }
  }
}

Corpus load_corpus(const std::filesystem::path& root) {
  const json meta = read_json(root / "corpus.json");
  Corpus corpus;
  CorpusConfig& c = corpus.config;
  c.seed = meta.at("seed").get<std::uint64_t>();
  c.height = meta.at("height").get<int>();
  c.width = meta.at("width").get<int>();
  c.joints = meta.at("joints").get<int>();
  c.sigma = meta.at("sigma").get<double>();
  c.split_ratio = meta.at("split_ratio").get<double>();
  corpus.skeleton = Skeleton::humanoid(c.joints);
  for (const auto& id_json : meta.at("task_ids")) {
    const int id = id_json.get<int>();
    const auto dir = root / task_dir_name(id);
    TaskDataset task;
    task.id = id;
    task.appearance = appearance_from(read_json(dir / "appearance.json"));
    for (const auto& p : read_json(dir / "poses.json")) {
      Pose pose;
      pose.root = Eigen::Vector2d(p.at("root").at(0).get<double>(), p.at("root").at(1).get<double>());
      pose.angles = p.at("angles").get<std::vector<double>>();
      task.poses.push_back(std::move(pose));
    }
    for (std::size_t i = 0; i < task.poses.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%04zu.png", i);
      TensorF frame = from_rgb8(read_png(dir / "frames" / name));
      if (frame.dim(1) != c.height || frame.dim(2) != c.width) {
        throw std::runtime_error("frame " + (dir / "frames" / name).string() + " has unexpected size");
      }
      task.frames.push_back(std::move(frame));
    }
    task.split_index = split_index_for(task.size(), c.split_ratio);
    corpus.tasks.push_back(std::move(task));
  }
  return corpus;
}

}  // namespace metapix
