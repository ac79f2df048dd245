#include "metapix/image_io.hpp"
#include "metapix/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace metapix;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("metapix_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("humanoid skeletons are valid trees") {
  for (int j : {8, 12}) {
    const Skeleton s = Skeleton::humanoid(j);
    CHECK(s.joints() == j);
    CHECK(s.parent[0] == -1);
    CHECK_NOTHROW(s.validate());
    for (double len : s.bone_length) CHECK((len > 0 && len < 0.5));
  }
  CHECK_THROWS(Skeleton::humanoid(5));
  Skeleton bad = Skeleton::humanoid(8);
  bad.parent[3] = 5;
  CHECK_THROWS(bad.validate());
  bad = Skeleton::humanoid(8);
  bad.bone_length[0] = 0.6;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("appearance sampling is deterministic and in range") {
  CHECK(sample_appearance(3) == sample_appearance(3));
  const Appearance a = sample_appearance(1), b = sample_appearance(2);
  bool differs = false;
  for (std::size_t i = 0; i < a.limb_colors.size(); ++i) differs = differs || a.limb_colors[i] != b.limb_colors[i];
  CHECK(differs);
  const Appearance z = sample_appearance(0);
  for (const Color& c : z.limb_colors) CHECK((c.minCoeff() >= 0 && c.maxCoeff() <= 1));
  CHECK((z.torso_color.minCoeff() >= 0 && z.torso_color.maxCoeff() <= 1));
  CHECK((z.head_color.minCoeff() >= 0 && z.head_color.maxCoeff() <= 1));
}

TEST_CASE("pose trajectories are smooth, deterministic and stay near the frame") {
  const Skeleton s = Skeleton::humanoid(8);
  CHECK(pose_trajectory(9, 1, s).size() == 1);
  const auto poses = pose_trajectory(9, 200, s);
  CHECK(poses == pose_trajectory(9, 200, s));
  double worst = 0;
  for (std::size_t t = 1; t < poses.size(); ++t)
    for (std::size_t j = 0; j < poses[t].angles.size(); ++j)
      worst = std::max(worst, std::abs(poses[t].angles[j] - poses[t - 1].angles[j]));
  CHECK(worst < 0.2);
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const Pose& p : pose_trajectory(seed, 200, s))
      for (const auto& q : joint_positions(p, s)) {
        CHECK(q.x() >= -0.2);
        CHECK(q.x() <= 1.2);
        CHECK(q.y() >= -0.2);
        CHECK(q.y() <= 1.2);
      }
}

TEST_CASE("heatmap peaks, truncation and mass") {
  const Skeleton s = Skeleton::humanoid(8);
  Pose p = pose_trajectory(4, 1, s).front();
  p.root = {16.5 / 32.0, 16.5 / 32.0};
  const TensorF hm = render_heatmap(p, s, 32, 32, 1.5);
  CHECK(hm.shape() == Shape{8, 32, 32});
  CHECK(hm[16 * 32 + 16] == 1.0f);
  const double mass = hm.data().head(32 * 32).cast<double>().sum();
  CHECK(std::abs(mass - 2 * std::numbers::pi * 1.5 * 1.5) / (2 * std::numbers::pi * 1.5 * 1.5) < 0.05);

  p.root = {5.0, 5.0};
  const TensorF far = render_heatmap(p, s, 32, 32, 1.5);
  CHECK(far.data().isZero());
  CHECK_THROWS(render_heatmap(p, s, 32, 32, 0.0));
}

TEST_CASE("heatmap argmax sits on the rendered joint") {
  const Skeleton s = Skeleton::humanoid(8);
  for (const Pose& p : pose_trajectory(12, 20, s)) {
    const TensorF hm = render_heatmap(p, s, 32, 32, 1.5);
    const auto joints = joint_positions(p, s);
    for (int j = 0; j < 8; ++j) {
      const auto channel = hm.data().segment(j * 1024, 1024);
      if (channel.maxCoeff() <= 0) continue;
      Index best;
      channel.maxCoeff(&best);
      const double jx = joints[std::size_t(j)].x() * 32 - 0.5, jy = joints[std::size_t(j)].y() * 32 - 0.5;
      CHECK(std::abs(double(best % 32) - jx) <= 1.0);
      CHECK(std::abs(double(best / 32) - jy) <= 1.0);
    }
  }
}

TEST_CASE("rendering is deterministic and bounded") {
  const Skeleton s = Skeleton::humanoid(8);
  const Appearance a = sample_appearance(5);
  const Pose p = pose_trajectory(5, 3, s)[2];
  const TensorF f1 = render_frame(p, a, s, 32, 32);
  const TensorF f2 = render_frame(p, a, s, 32, 32);
  CHECK(f1.same_values(f2));
  CHECK(f1.data().minCoeff() >= 0.0f);
  CHECK(f1.data().maxCoeff() <= 1.0f);
}

TEST_CASE("changing only the background leaves opaque figure pixels untouched") {
  const Skeleton s = Skeleton::humanoid(8);
  const Appearance a = sample_appearance(6);
  Appearance b = a;
  b.background = sample_appearance(77).background;
  const Pose p = pose_trajectory(6, 1, s).front();
  const RenderedFrame ra = render(p, a, s, 32, 32), rb = render(p, b, s, 32, 32);
  CHECK((ra.figure == rb.figure).all());
  const Index plane = 32 * 32;
  int figure_pixels = 0, identical_figure = 0, differing_background = 0, background_pixels = 0;
  for (Index i = 0; i < plane; ++i) {
    double diff = 0;
    for (Index c = 0; c < 3; ++c) diff += std::abs(ra.image[c * plane + i] - rb.image[c * plane + i]);
    if (ra.figure[i]) {
      ++figure_pixels;
      identical_figure += diff == 0.0 ? 1 : 0;
    } else {
      ++background_pixels;
      differing_background += diff > 0.0 ? 1 : 0;
    }
  }
  REQUIRE(figure_pixels > 0);
  CHECK(differing_background == background_pixels);
  // Pixels with full coverage are identical; partially covered edge pixels
  // carry some background through anti-aliasing.
  CHECK(identical_figure > figure_pixels / 3);
}

TEST_CASE("different task seeds are visually distinguishable") {
  const Skeleton s = Skeleton::humanoid(8);
  const Pose p = pose_trajectory(8, 1, s).front();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TensorF a = render_frame(p, sample_appearance(seed), s, 32, 32);
    const TensorF b = render_frame(p, sample_appearance(seed + 100), s, 32, 32);
    CHECK((a.data() - b.data()).cwiseAbs().mean() > 0.01f);
  }
}

TEST_CASE("split index follows the 0.85 ratio") {
  CHECK(split_index_for(200, 0.85) == 170);
  CHECK(split_index_for(20, 0.85) == 17);
  CHECK(split_index_for(1, 0.85) == 0);
}

TEST_CASE("corpus build, save and load round-trip exactly") {
  CorpusConfig cfg;
  cfg.seed = 7;
  const Corpus corpus = build_corpus(3, 12, cfg);
  CHECK(corpus.tasks.size() == 3);
  CHECK(corpus.tasks[0].size() == 12);
  CHECK(corpus.tasks[0].split_index == 10);
  CHECK_THROWS(build_corpus(0, 12, cfg));

  const fs::path dir = fresh_dir("corpus");
  save_corpus(corpus, dir);
  CHECK(fs::exists(dir / "corpus.json"));
  const Corpus back = load_corpus(dir);
  REQUIRE(back.tasks.size() == 3);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(back.tasks[t].id == corpus.tasks[t].id);
    CHECK(back.tasks[t].appearance == corpus.tasks[t].appearance);
    CHECK(back.tasks[t].poses == corpus.tasks[t].poses);
    CHECK(back.tasks[t].split_index == corpus.tasks[t].split_index);
    for (std::size_t f = 0; f < 12; ++f) CHECK(back.tasks[t].frames[f].same_values(corpus.tasks[t].frames[f]));
  }

  const fs::path again = fresh_dir("corpus_again");
  save_corpus(build_corpus(3, 12, cfg), again);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path twin = again / fs::relative(entry.path(), dir);
    CHECK(slurp(entry.path()) == slurp(twin));
  }
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("stored frames are exactly what the renderer produced after 8-bit quantization") {
  CorpusConfig cfg;
  cfg.seed = 11;
  const Corpus corpus = build_corpus(1, 4, cfg);
  const TaskDataset& t = corpus.tasks[0];
  for (int f = 0; f < 4; ++f) {
    const TensorF expected = quantize8(render_frame(t.poses[std::size_t(f)], t.appearance, corpus.skeleton, 32, 32));
    CHECK(t.frames[std::size_t(f)].same_values(expected));
    CHECK(from_rgb8(to_rgb8(expected)).same_values(expected));
  }
}
