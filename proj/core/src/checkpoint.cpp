#include <bit>
#include <cstring>

#include "dtpn/error.hpp"
#include "dtpn/io_formats.hpp"
#include "dtpn/model.hpp"

namespace dtpn {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(Model& model) {
  const ModelConfig& c = model.config();
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (int v : {c.scales, c.base_scale, c.input_dim, c.branch_filters, c.head_kernel, c.num_classes}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  put_u32(out, static_cast<std::uint32_t>(c.branches));
  put_u32(out, c.local_context ? 1u : 0u);
  put_u32(out, c.global_context ? 1u : 0u);

  auto params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto dim : p.shape) put_u32(out, static_cast<std::uint32_t>(dim));
    for (float v : *p.value) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Model decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string_view(kCheckpointMagic, 4)) throw ParseError("checkpoint: bad magic");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(v));
  }
  ModelConfig c;
  c.scales = static_cast<int>(r.u32());
  c.base_scale = static_cast<int>(r.u32());
  c.input_dim = static_cast<int>(r.u32());
  c.branch_filters = static_cast<int>(r.u32());
  c.head_kernel = static_cast<int>(r.u32());
  c.num_classes = static_cast<int>(r.u32());
  c.branches = static_cast<BranchMode>(r.u32());
  c.local_context = r.u32() != 0;
  c.global_context = r.u32() != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }

  Model model(c);
  auto params = model.parameters();
  if (r.u32() != params.size()) throw ParseError("checkpoint: parameter block count mismatch");
  for (auto& p : params) {
    const std::string name = r.str(r.u32());
    if (name != p.name) throw ParseError("checkpoint: expected block '" + p.name + "', found '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank != p.shape.size()) throw ParseError("checkpoint: rank mismatch for '" + name + "'");
    for (auto dim : p.shape) {
      if (r.u32() != dim) throw ParseError("checkpoint: shape mismatch for '" + name + "'");
    }
    for (float& v : *p.value) v = std::bit_cast<float>(r.u32());
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  io::write_file(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace dtpn
