#include "metapix/checkpoint.hpp"

#include "metapix/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace metapix {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, std::uint32_t(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointFormatError(std::string("checkpoint truncated while reading ") + what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what), 4);
    return v;
  }
  std::string string(const char* what) {
    const std::uint32_t n = u32(what);
    return std::string(take(n, what), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void put_params(std::string& out, const ParamSetF& params) {
  for (const auto& [name, t] : params) {
    put_string(out, name);
    put_u32(out, std::uint32_t(t.rank()));
    for (Index d : t.shape()) put_u32(out, std::uint32_t(d));
    out.append(reinterpret_cast<const char*>(t.data().data()), std::size_t(t.size()) * sizeof(float));
  }
}

void check_against(const ParamSetF& loaded, const ParamSetF& expected, const char* network) {
  for (const auto& [name, t] : expected) {
    if (!loaded.contains(name)) {
      throw CheckpointShapeError(std::string(network) + " tensor '" + name + "' missing from checkpoint");
    }
    const auto& got = loaded.at(name);
    if (got.shape() != t.shape()) {
      throw CheckpointShapeError(std::string(network) + " tensor '" + name + "' has shape " + shape_str(got.shape()) +
                                 ", config expects " + shape_str(t.shape()));
    }
  }
  for (const auto& [name, _] : loaded) {
    if (!expected.contains(name)) {
      throw CheckpointShapeError(std::string(network) + " tensor '" + name + "' is not part of the configured model");
    }
  }
}

}  // namespace

std::string encode_checkpoint(const ModelPair& model) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_string(out, model_config_json(model.config).dump());
  put_u32(out, std::uint32_t(model.gen.size() + model.disc.size()));
  put_params(out, model.gen);
  put_params(out, model.disc);
  return out;
}

ModelPair decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointFormatError("not a checkpoint: bad magic (expected MPIX)");
  }
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointFormatError("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
                                std::to_string(kCheckpointVersion) + ")");
  }

  ModelPair model;
  const std::string config_text = in.string("model config");
  try {
    model.config = model_config_from_json(json::parse(config_text));
  } catch (const json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint model config is malformed: ") + e.what());
  }

  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.string("tensor name");
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank > 8) throw CheckpointFormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::size_t elements = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = in.u32("tensor dims");
      if (dim != 0 && elements > bytes.size() / dim) throw CheckpointFormatError("tensor '" + name + "' exceeds the file size");
      elements *= dim;
      shape.push_back(Index(dim));
    }
    const std::size_t n = elements * sizeof(float);
    const char* raw = in.take(n, "tensor data");
    TensorF t(shape);
    std::memcpy(t.data().data(), raw, n);
    ParamSetF* target = name.starts_with("gen.") ? &model.gen : name.starts_with("disc.") ? &model.disc : nullptr;
    if (!target) throw CheckpointShapeError("tensor '" + name + "' belongs to neither network");
    if (target->contains(name)) throw CheckpointFormatError("duplicate tensor '" + name + "'");
    target->add(name, std::move(t));
  }
  if (!in.done()) throw CheckpointFormatError("trailing bytes after the last tensor");

  check_against(model.gen, init_generator<float>(model.config.generator, 0), "generator");
  check_against(model.disc, init_discriminator<float>(model.config.discriminator, 0), "discriminator");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const ModelPair& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
}

ModelPair load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return decode_checkpoint(buffer.str());
}

}  // namespace metapix
