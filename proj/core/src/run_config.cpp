#include "dtpn/run_config.hpp"

#include <charconv>
#include <sstream>

#include "dtpn/error.hpp"
#include "dtpn/io_formats.hpp"

namespace dtpn {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: invalid value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError("config: invalid boolean '" + std::string(value) + "' for " + std::string(key));
}

const char* branch_name(BranchMode m) {
  switch (m) {
    case BranchMode::ConvOnly: return "conv";
    case BranchMode::PoolOnly: return "pool";
    case BranchMode::Both: break;
  }
  return "both";
}

}  // namespace

RunConfig::RunConfig() { model.input_dim = 32; }

ModelConfig RunConfig::model_for(int num_classes) const {
  ModelConfig m = model;
  m.scales = sampling.scales;
  m.base_scale = sampling.base_scale;
  m.num_classes = num_classes;
  return m;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  auto i = [&] { return parse_number<int>(key, value); };
  auto f = [&] { return parse_number<double>(key, value); };
  if (key == "sampling.scales") sampling.scales = i();
  else if (key == "sampling.base_scale") sampling.base_scale = i();
  else if (key == "sampling.window") sampling.window = i();
  else if (key == "backbone.seed") backbone_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "backbone.frame_dim") frame_dim = i();
  else if (key == "model.input_dim") model.input_dim = i();
  else if (key == "model.branch_filters") model.branch_filters = i();
  else if (key == "model.head_kernel") model.head_kernel = i();
  else if (key == "model.branches") {
    if (value == "both") model.branches = BranchMode::Both;
    else if (value == "conv") model.branches = BranchMode::ConvOnly;
    else if (value == "pool") model.branches = BranchMode::PoolOnly;
    else throw ConfigError("config: model.branches must be both, conv or pool");
  } else if (key == "model.local_context") model.local_context = parse_bool(key, value);
  else if (key == "model.global_context") model.global_context = parse_bool(key, value);
  else if (key == "train.epochs_hi") train.epochs_hi = i();
  else if (key == "train.epochs_lo") train.epochs_lo = i();
  else if (key == "train.lr_hi") train.lr_hi = f();
  else if (key == "train.lr_lo") train.lr_lo = f();
  else if (key == "train.match_threshold") train.match_threshold = f();
  else if (key == "train.neg_pos_ratio") train.neg_pos_ratio = f();
  else if (key == "train.lambda_cls") train.lambda_cls = f();
  else if (key == "train.lambda_loc") train.lambda_loc = f();
  else if (key == "train.lambda_act") train.lambda_act = f();
  else if (key == "train.batch_size") train.batch_size = i();
  else if (key == "train.seed") train.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "train.flip_probability") train.flip_probability = f();
  else if (key == "postprocess.nms_threshold") nms.threshold = f();
  else if (key == "postprocess.top_k") nms.top_k = parse_number<std::size_t>(key, value);
  else if (key == "postprocess.score_floor") nms.score_floor = f();
  else throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  sampling.validate();
  model_for(2).validate();
  train.validate();
  if (!(nms.threshold >= 0.0 && nms.threshold <= 1.0)) throw ConfigError("config: nms threshold must be in [0,1]");
  if (nms.top_k < 1) throw ConfigError("config: top_k must be >= 1");
  if (frame_dim < 1) throw ConfigError("config: backbone.frame_dim must be positive");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "sampling.scales = " << sampling.scales << '\n'
     << "sampling.base_scale = " << sampling.base_scale << '\n'
     << "sampling.window = " << sampling.window << '\n'
     << "backbone.seed = " << backbone_seed << '\n'
     << "backbone.frame_dim = " << frame_dim << '\n'
     << "model.input_dim = " << model.input_dim << '\n'
     << "model.branch_filters = " << model.branch_filters << '\n'
     << "model.head_kernel = " << model.head_kernel << '\n'
     << "model.branches = " << branch_name(model.branches) << '\n'
     << "model.local_context = " << (model.local_context ? "true" : "false") << '\n'
     << "model.global_context = " << (model.global_context ? "true" : "false") << '\n'
     << "train.epochs_hi = " << train.epochs_hi << '\n'
     << "train.epochs_lo = " << train.epochs_lo << '\n'
     << "train.lr_hi = " << train.lr_hi << '\n'
     << "train.lr_lo = " << train.lr_lo << '\n'
     << "train.match_threshold = " << train.match_threshold << '\n'
     << "train.neg_pos_ratio = " << train.neg_pos_ratio << '\n'
     << "train.lambda_cls = " << train.lambda_cls << '\n'
     << "train.lambda_loc = " << train.lambda_loc << '\n'
     << "train.lambda_act = " << train.lambda_act << '\n'
     << "train.batch_size = " << train.batch_size << '\n'
     << "train.seed = " << train.seed << '\n'
     << "train.flip_probability = " << train.flip_probability << '\n'
     << "postprocess.nms_threshold = " << nms.threshold << '\n'
     << "postprocess.top_k = " << nms.top_k << '\n'
     << "postprocess.score_floor = " << nms.score_floor << '\n';
  return os.str();
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'section.key = value'");
    }
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  return parse_run_config(io::read_file(path), std::move(base));
}

}  // namespace dtpn
