#include "d3net/network.hpp"

#include "d3net/ops.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#ifndef D3NET_CONFIG_DIR
#define D3NET_CONFIG_DIR "configs"
#endif

namespace d3net {

using json = nlohmann::json;

namespace {

using Kind = StageConfig::Kind;

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::conv: return "conv";
    case Kind::d3: return "d3";
    case Kind::down: return "down";
    case Kind::up: return "up";
    case Kind::concat: return "concat";
    case Kind::project: return "project";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::conv, Kind::d3, Kind::down, Kind::up, Kind::concat, Kind::project}) {
    if (s == kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown stage type '" + s + "'");
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

json stage_to_json(const StageConfig& s) {
  json j;
  j["type"] = kind_name(s.kind);
  if (!s.id.empty()) j["id"] = s.id;
  switch (s.kind) {
    case Kind::conv:
      j["channels"] = s.channels;
      j["kernel"] = s.kernel;
      break;
    case Kind::project: j["channels"] = s.channels; break;
    case Kind::concat: j["with"] = s.with; break;
    case Kind::d3:
      j["k"] = s.d3.d2.growth_rate;
      j["L"] = s.d3.d2.num_layers;
      j["M"] = s.d3.num_blocks;
      if (s.d3.d2.kernel != 3) j["kernel"] = s.d3.d2.kernel;
      if (s.reduction) j["N"] = *s.reduction;
      if (s.dilation) j["dilation"] = to_string(*s.dilation);
      if (!s.d3.d2.dilation_override.empty()) j["dilations"] = s.d3.d2.dilation_override;
      break;
    case Kind::down:
    case Kind::up: break;
  }
  return j;
}

StageConfig stage_from_json(const json& j, const std::string& where) {
  StageConfig s;
  s.kind = parse_kind(j.at("type").get<std::string>());
  s.id = get_or<std::string>(j, "id", "");
  switch (s.kind) {
    case Kind::conv:
      reject_unknown(j, {"type", "id", "channels", "kernel"}, where);
      s.channels = j.at("channels").get<Index>();
      s.kernel = get_or<Index>(j, "kernel", 3);
      break;
    case Kind::project:
      reject_unknown(j, {"type", "id", "channels"}, where);
      s.channels = j.at("channels").get<Index>();
      break;
    case Kind::concat:
      reject_unknown(j, {"type", "id", "with"}, where);
      s.with = j.at("with").get<std::string>();
      break;
    case Kind::d3:
      reject_unknown(j, {"type", "id", "k", "L", "M", "N", "kernel", "dilation", "dilations"}, where);
      s.d3.d2.growth_rate = j.at("k").get<Index>();
      s.d3.d2.num_layers = j.at("L").get<Index>();
      s.d3.num_blocks = j.at("M").get<Index>();
      s.d3.d2.kernel = get_or<Index>(j, "kernel", 3);
      if (j.contains("N")) s.reduction = j.at("N").get<Index>();
      if (j.contains("dilation")) s.dilation = parse_dilation_scheme(j.at("dilation").get<std::string>());
      if (j.contains("dilations")) s.d3.d2.dilation_override = j.at("dilations").get<std::vector<std::vector<Index>>>();
      break;
    case Kind::down:
    case Kind::up: reject_unknown(j, {"type", "id"}, where); break;
  }
  return s;
}

json config_to_json(const NetworkConfig& c) {
  json j;
  j["name"] = c.name;
  j["in_channels"] = c.in_channels;
  j["max_bin"] = c.max_bin;
  j["sample_rate"] = c.sample_rate;
  j["dilation"] = to_string(c.dilation);
  j["reduction"] = c.reduction;
  j["bands"] = json::array();
  for (const BandConfig& b : c.bands) {
    json jb;
    jb["name"] = b.name;
    jb["full"] = b.full;
    if (!b.full) {
      jb["begin"] = b.begin;
      jb["end"] = b.end;
    }
    jb["stages"] = json::array();
    for (const StageConfig& s : b.stages) jb["stages"].push_back(stage_to_json(s));
    j["bands"].push_back(jb);
  }
  j["final"] = {{"k", c.final_block.growth_rate}, {"L", c.final_block.num_layers}};
  j["gate"] = {{"kernel", c.gate_kernel}, {"channels", c.gate_channels}};
  return j;
}

NetworkConfig config_from_json(const json& j) {
  reject_unknown(j, {"name", "in_channels", "max_bin", "sample_rate", "dilation", "reduction", "bands", "final", "gate",
                     "comment"},
                 "config");
  NetworkConfig c;
  c.name = get_or<std::string>(j, "name", "unnamed");
  c.in_channels = get_or<Index>(j, "in_channels", 2);
  c.max_bin = j.at("max_bin").get<Index>();
  c.sample_rate = get_or<double>(j, "sample_rate", 44100.0);
  c.dilation = parse_dilation_scheme(get_or<std::string>(j, "dilation", "multi"));
  c.reduction = get_or<Index>(j, "reduction", 0);
  for (std::size_t bi = 0; bi < j.at("bands").size(); ++bi) {
    const json& jb = j.at("bands")[bi];
    const std::string where = "band " + std::to_string(bi);
    BandConfig b;
    b.name = get_or<std::string>(jb, "name", "band" + std::to_string(bi));
    b.full = get_or<bool>(jb, "full", false);
    // a full band always spans [0, max_bin)
    reject_unknown(jb, b.full ? std::initializer_list<const char*>{"name", "full", "stages"}
                              : std::initializer_list<const char*>{"name", "begin", "end", "full", "stages"},
                   where);
    b.begin = b.full ? 0 : jb.at("begin").get<Index>();
    b.end = b.full ? c.max_bin : jb.at("end").get<Index>();
    for (std::size_t si = 0; si < jb.at("stages").size(); ++si) {
      b.stages.push_back(stage_from_json(jb.at("stages")[si], where + " stage " + std::to_string(si)));
    }
    c.bands.push_back(std::move(b));
  }
  const json& jf = j.at("final");
  reject_unknown(jf, {"k", "L"}, "final");
  c.final_block.growth_rate = jf.at("k").get<Index>();
  c.final_block.num_layers = jf.at("L").get<Index>();
  if (j.contains("gate")) {
    reject_unknown(j.at("gate"), {"kernel", "channels"}, "gate");
    c.gate_kernel = get_or<Index>(j.at("gate"), "kernel", 3);
    c.gate_channels = get_or<Index>(j.at("gate"), "channels", 2);
  }
  return c;
}

json parse_override_value(const std::string& value) {
  try {
    return json::parse(value);
  } catch (const json::parse_error&) {
    return json(value);
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// Channel widths flowing out of a band stream, simulated without tensors.
struct StreamShape {
  std::vector<Index> widths;
  int level = 0;
};

StreamShape simulate_stream(const NetworkConfig& c, const BandConfig& b) {
  const std::string where = "band '" + b.name + "'";
  if (b.stages.empty() || b.stages.front().kind != Kind::conv) {
    throw std::invalid_argument(where + ": the first stage must be a conv");
  }
  StreamShape s;
  std::map<std::string, StreamShape> saved;
  for (std::size_t i = 0; i < b.stages.size(); ++i) {
    const StageConfig& st = b.stages[i];
    const std::string here = where + " stage " + std::to_string(i) + " (" + kind_name(st.kind) + ")";
    switch (st.kind) {
      case Kind::conv:
        if (i != 0) throw std::invalid_argument(here + ": conv is only allowed as the first stage");
        if (st.channels < 1) throw std::invalid_argument(here + ": channels must be positive");
        if (st.kernel < 1 || st.kernel % 2 == 0) throw std::invalid_argument(here + ": kernel must be odd");
        s.widths = {st.channels};
        break;
      case Kind::d3: {
        try {
          c.resolved_d3(st).validate();
        } catch (const std::invalid_argument& e) {
          throw std::invalid_argument(here + ": " + e.what());
        }
        const D3BlockConfig d3 = c.resolved_d3(st);
        s.widths.assign(static_cast<std::size_t>(d3.d2.reduced_layers()), d3.d2.growth_rate);
        break;
      }
      case Kind::down: ++s.level; break;
      case Kind::up: {
        if (s.level == 0) throw std::invalid_argument(here + ": upsampling above the input resolution");
        --s.level;
        Index total = 0;
        for (Index w : s.widths) total += w;
        s.widths = {total};
        break;
      }
      case Kind::concat: {
        auto it = saved.find(st.with);
        if (it == saved.end()) throw std::invalid_argument(here + ": references unknown or later stage '" + st.with + "'");
        if (it->second.level != s.level) {
          throw std::invalid_argument(here + ": stage '" + st.with + "' is at scale 1/" +
                                      std::to_string(1 << it->second.level) + " but the stream is at 1/" +
                                      std::to_string(1 << s.level));
        }
        s.widths.insert(s.widths.end(), it->second.widths.begin(), it->second.widths.end());
        break;
      }
      case Kind::project:
        if (st.channels < 1) throw std::invalid_argument(here + ": channels must be positive");
        s.widths = {st.channels};
        break;
    }
    if (!st.id.empty()) {
      if (saved.count(st.id)) throw std::invalid_argument(here + ": duplicate stage id '" + st.id + "'");
      saved[st.id] = s;
    }
  }
  if (s.level != 0) throw std::invalid_argument(where + ": stream ends at scale 1/" + std::to_string(1 << s.level));
  return s;
}

Index sum_widths(const std::vector<Index>& w) {
  Index t = 0;
  for (Index x : w) t += x;
  return t;
}

Tensor crop_spatial(const Tensor& x, Index T, Index F) {
  Tensor y = x;
  if (y.dim(2) > T) y = slice(y, axis::time, 0, T);
  if (y.dim(3) > F) y = slice(y, axis::frequency, 0, F);
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------

NetworkConfig NetworkConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
}

NetworkConfig NetworkConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string NetworkConfig::to_json_text(int indent) const { return config_to_json(*this).dump(indent); }

void NetworkConfig::apply_override(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("override with an empty key");
  json j = config_to_json(*this);
  json* node = &j;
  std::stringstream ss(key);
  std::string token;
  std::vector<std::string> tokens;
  while (std::getline(ss, token, '.')) tokens.push_back(token);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (node->is_array()) {
      const std::size_t idx = std::stoul(tokens[i]);
      if (idx >= node->size()) throw std::invalid_argument("override '" + key + "': index " + tokens[i] + " out of range");
      node = &(*node)[idx];
    } else if (node->is_object() && node->contains(tokens[i])) {
      node = &(*node)[tokens[i]];
    } else {
      throw std::invalid_argument("override '" + key + "': no such key '" + tokens[i] + "'");
    }
  }
  if (node->is_array()) {
    const std::size_t idx = std::stoul(tokens.back());
    if (idx >= node->size()) throw std::invalid_argument("override '" + key + "': index out of range");
    (*node)[idx] = parse_override_value(value);
  } else {
    (*node)[tokens.back()] = parse_override_value(value);
  }
  try {
    *this = config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument("override '" + key + "=" + value + "': " + e.what());
  }
}

D3BlockConfig NetworkConfig::resolved_d3(const StageConfig& stage) const {
  D3BlockConfig d = stage.d3;
  d.d2.scheme = stage.dilation.value_or(dilation);
  d.d2.reduction = stage.reduction.value_or(reduction);
  return d;
}

D2BlockConfig NetworkConfig::resolved_final() const {
  D2BlockConfig d = final_block;
  d.kernel = 3;
  d.scheme = dilation;
  d.reduction = 0;
  return d;
}

void NetworkConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("config: in_channels must be positive");
  if (max_bin < 1) throw std::invalid_argument("config: max_bin must be positive");
  if (gate_channels != 2) throw std::invalid_argument("config: gate conv must produce 2 channels (stereo estimate)");
  if (gate_channels != in_channels) throw std::invalid_argument("config: gate channels must equal input channels");
  if (gate_kernel < 1 || gate_kernel % 2 == 0) throw std::invalid_argument("config: gate kernel must be odd");
  if (bands.empty()) throw std::invalid_argument("config: no bands");
  resolved_final().validate();

  std::vector<const BandConfig*> split;
  std::set<std::string> names;
  for (const BandConfig& b : bands) {
    if (!names.insert(b.name).second) throw std::invalid_argument("config: duplicate band name '" + b.name + "'");
    if (b.full && (b.begin != 0 || b.end != max_bin)) {
      throw std::invalid_argument("config: full band '" + b.name + "' must span [0, max_bin)");
    }
    if (b.begin < 0 || b.end <= b.begin || b.end > max_bin) {
      throw std::invalid_argument("config: band '" + b.name + "' has invalid bin range [" + std::to_string(b.begin) +
                                  ", " + std::to_string(b.end) + ")");
    }
    simulate_stream(*this, b);
    if (!b.full) split.push_back(&b);
  }
  if (!split.empty()) {
    Index next = 0;
    Index channels = -1;
    for (const BandConfig* b : split) {
      if (b->begin != next) {
        throw std::invalid_argument("config: split bands must tile [0, max_bin) in order; band '" + b->name +
                                    "' starts at " + std::to_string(b->begin) + ", expected " + std::to_string(next));
      }
      next = b->end;
      const Index c = sum_widths(simulate_stream(*this, *b).widths);
      if (channels >= 0 && c != channels) {
        throw std::invalid_argument("config: split bands must end with equal channel counts for frequency concat; band '" +
                                    b->name + "' has " + std::to_string(c) + ", expected " + std::to_string(channels));
      }
      channels = c;
    }
    if (next != max_bin) {
      throw std::invalid_argument("config: split bands end at " + std::to_string(next) + ", expected max_bin " +
                                  std::to_string(max_bin));
    }
  }
}

std::string fingerprint_text(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string NetworkConfig::fingerprint() const { return fingerprint_text(config_to_json(*this).dump()); }

std::string default_config_dir() {
  if (const char* env = std::getenv("D3NET_CONFIG_DIR")) return env;
  return D3NET_CONFIG_DIR;
}

NetworkConfig resolve_config(const std::string& path_or_name) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path_or_name)) return NetworkConfig::load(path_or_name);
  const fs::path shipped = fs::path(default_config_dir()) / (path_or_name + ".json");
  if (fs::is_regular_file(shipped)) return NetworkConfig::load(shipped.string());
  throw std::runtime_error("config '" + path_or_name + "' is neither a file nor a shipped config in " +
                           default_config_dir());
}

// ---------------------------------------------------------------------------

struct Model::Stream {
  struct Stage {
    StageConfig cfg;
    MultiDilatedConvParams conv;  // conv and project
    std::unique_ptr<D3Block> d3;
    Tensor tconv;                 // [C, C, 2, 2]
    std::vector<BatchNormParams> norms;
  };
  BandConfig band;
  std::vector<Stage> stages;

  FeatureMap forward(const Tensor& input, NormMode mode) {
    FeatureMap x{input};
    std::map<std::string, FeatureMap> saved;
    for (Stage& st : stages) {
      switch (st.cfg.kind) {
        case Kind::conv: x = {multidilated_conv(std::vector<std::vector<Tensor>>{x}, st.conv)}; break;
        case Kind::d3: x = st.d3->forward(x, mode); break;
        case Kind::down:
          for (Tensor& piece : x) piece = avg_pool_2x2(piece);
          break;
        case Kind::up: x = {transposed_conv_2x2(x, st.tconv)}; break;
        case Kind::concat: {
          const FeatureMap& skip = saved.at(st.cfg.with);
          for (Tensor& piece : x) piece = crop_spatial(piece, skip.front().dim(2), skip.front().dim(3));
          x.insert(x.end(), skip.begin(), skip.end());
          break;
        }
        case Kind::project: {
          std::vector<Tensor> act;
          for (std::size_t j = 0; j < x.size(); ++j) {
            st.norms[j].mode = mode;
            act.push_back(composite_psi(x[j], st.norms[j]));
          }
          x = {multidilated_conv(std::vector<std::vector<Tensor>>{act}, st.conv)};
          break;
        }
      }
      if (!st.cfg.id.empty()) saved[st.cfg.id] = x;
    }
    for (Tensor& piece : x) piece = crop_spatial(piece, input.dim(2), input.dim(3));
    return x;
  }
};

Model::Model(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  std::vector<Index> split_widths;
  std::vector<Index> full_widths;
  for (const BandConfig& band : cfg_.bands) {
    auto stream = std::make_unique<Stream>();
    stream->band = band;
    std::vector<Index> widths{cfg_.in_channels};
    std::map<std::string, std::vector<Index>> saved;
    for (const StageConfig& sc : band.stages) {
      Stream::Stage st;
      st.cfg = sc;
      const Index c = sum_widths(widths);
      switch (sc.kind) {
        case Kind::conv:
          st.conv.groups.push_back({init_kernel({sc.channels, c, sc.kernel, sc.kernel}, c * sc.kernel * sc.kernel, rng), 1});
          st.conv.bias = Tensor(Shape{sc.channels});
          widths = {sc.channels};
          break;
        case Kind::d3: {
          st.d3 = std::make_unique<D3Block>(cfg_.resolved_d3(sc), widths, rng);
          const D3BlockConfig d3 = cfg_.resolved_d3(sc);
          widths.assign(static_cast<std::size_t>(d3.d2.reduced_layers()), d3.d2.growth_rate);
          break;
        }
        case Kind::down: break;
        case Kind::up:
          st.tconv = init_kernel({c, c, 2, 2}, c, rng);
          widths = {c};
          break;
        case Kind::concat: {
          const auto& skip = saved.at(sc.with);
          widths.insert(widths.end(), skip.begin(), skip.end());
          break;
        }
        case Kind::project:
          for (Index w : widths) st.norms.push_back(BatchNormParams::identity(w));
          st.conv.groups.push_back({init_kernel({sc.channels, c, 1, 1}, c, rng), 1});
          widths = {sc.channels};
          break;
      }
      if (!sc.id.empty()) saved[sc.id] = widths;
      stream->stages.push_back(std::move(st));
    }
    if (band.full) {
      full_widths.insert(full_widths.end(), widths.begin(), widths.end());
    } else if (split_widths.empty()) {
      split_widths.push_back(sum_widths(widths));
    }
    streams_.push_back(std::move(stream));
  }

  std::vector<Index> merged = split_widths;
  merged.insert(merged.end(), full_widths.begin(), full_widths.end());
  final_block_ = std::make_unique<D2Block>(cfg_.resolved_final(), merged, rng);
  const D2BlockConfig fb = cfg_.resolved_final();
  for (Index j = 0; j < fb.reduced_layers(); ++j) final_norms_.push_back(BatchNormParams::identity(fb.growth_rate));
  const Index gate_in = fb.out_channels();
  const Index gk = cfg_.gate_kernel;
  gate_.groups.push_back({init_kernel({cfg_.gate_channels, gate_in, gk, gk}, gate_in * gk * gk, rng), 1});
  gate_.bias = Tensor(Shape{cfg_.gate_channels});
  for (NamedTensor& p : parameters()) p.tensor.set_requires_grad(true);
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

Tensor Model::forward(const Tensor& mixture, NormMode mode) {
  if (mixture.rank() != 4 || mixture.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument("model: expected [N," + std::to_string(cfg_.in_channels) + ",T,F], got " +
                                shape_string(mixture.shape()));
  }
  const Index f_in = mixture.dim(3);
  const Tensor x = f_in >= cfg_.max_bin ? slice(mixture, axis::frequency, 0, cfg_.max_bin)
                                        : pad_zeros(mixture, axis::frequency, cfg_.max_bin);

  std::vector<Tensor> split;
  FeatureMap full;
  for (auto& stream : streams_) {
    const Tensor band = stream->band.full ? x : slice(x, axis::frequency, stream->band.begin, stream->band.end);
    FeatureMap out = stream->forward(band, mode);
    if (stream->band.full) {
      full.insert(full.end(), out.begin(), out.end());
    } else {
      split.push_back(flatten(out));
    }
  }
  FeatureMap merged;
  if (!split.empty()) merged.push_back(concat(split, axis::frequency));
  merged.insert(merged.end(), full.begin(), full.end());

  const FeatureMap y = final_block_->forward(merged, mode);
  std::vector<Tensor> act;
  for (std::size_t j = 0; j < y.size(); ++j) {
    final_norms_[j].mode = mode;
    act.push_back(composite_psi(y[j], final_norms_[j]));
  }
  const Tensor mask = sigmoid(multidilated_conv(std::vector<std::vector<Tensor>>{act}, gate_));
  const Tensor estimate = mul(mask, x);
  if (f_in > cfg_.max_bin) return pad_zeros(estimate, axis::frequency, f_in);
  if (f_in < cfg_.max_bin) return slice(estimate, axis::frequency, 0, f_in);
  return estimate;
}

TensorList Model::parameters() {
  TensorList out;
  for (std::size_t s = 0; s < streams_.size(); ++s) {
    const std::string sp = streams_[s]->band.name;
    for (std::size_t i = 0; i < streams_[s]->stages.size(); ++i) {
      auto& st = streams_[s]->stages[i];
      const std::string p = sp + ".stage" + std::to_string(i);
      switch (st.cfg.kind) {
        case Kind::conv:
          out.push_back({p + ".kernel", st.conv.groups[0].kernel});
          out.push_back({p + ".bias", *st.conv.bias});
          break;
        case Kind::d3: st.d3->collect_parameters(p, out); break;
        case Kind::up: out.push_back({p + ".kernel", st.tconv}); break;
        case Kind::project:
          for (std::size_t j = 0; j < st.norms.size(); ++j) collect_norm(p + ".norm" + std::to_string(j), st.norms[j], &out, nullptr);
          out.push_back({p + ".kernel", st.conv.groups[0].kernel});
          break;
        case Kind::down:
        case Kind::concat: break;
      }
    }
  }
  final_block_->collect_parameters("final", out);
  for (std::size_t j = 0; j < final_norms_.size(); ++j) collect_norm("gate.norm" + std::to_string(j), final_norms_[j], &out, nullptr);
  out.push_back({"gate.kernel", gate_.groups[0].kernel});
  out.push_back({"gate.bias", *gate_.bias});
  return out;
}

TensorList Model::buffers() {
  TensorList out;
  for (std::size_t s = 0; s < streams_.size(); ++s) {
    for (std::size_t i = 0; i < streams_[s]->stages.size(); ++i) {
      auto& st = streams_[s]->stages[i];
      const std::string p = streams_[s]->band.name + ".stage" + std::to_string(i);
      if (st.d3) st.d3->collect_buffers(p, out);
      for (std::size_t j = 0; j < st.norms.size(); ++j) collect_norm(p + ".norm" + std::to_string(j), st.norms[j], nullptr, &out);
    }
  }
  final_block_->collect_buffers("final", out);
  for (std::size_t j = 0; j < final_norms_.size(); ++j) collect_norm("gate.norm" + std::to_string(j), final_norms_[j], nullptr, &out);
  return out;
}

Index Model::parameter_count() {
  Index n = 0;
  for (const NamedTensor& p : parameters()) n += p.tensor.numel();
  return n;
}

const D2Block::Layer& Model::weight_norm_layer(std::string* name) const {
  const Stream* chosen = nullptr;
  for (const auto& s : streams_) {
    if (s->band.full) {
      chosen = s.get();
      break;
    }
  }
  if (!chosen) chosen = streams_.front().get();
  for (std::size_t i = 0; i < chosen->stages.size(); ++i) {
    const auto& st = chosen->stages[i];
    if (!st.d3) continue;
    auto& blocks = st.d3->blocks();
    if (name) {
      *name = chosen->band.name + ".stage" + std::to_string(i) + ".d2_" + std::to_string(blocks.size()) + ".layer" +
              std::to_string(blocks.back().layers().size());
    }
    return blocks.back().layers().back();
  }
  if (name) *name = "final.layer" + std::to_string(final_block_->layers().size());
  return final_block_->layers().back();
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', '3', 'N', 'C', 'K', 'P', 'T', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint '" + path + "' is truncated");
  return v;
}

TensorList all_tensors(Model& model) {
  TensorList t = model.parameters();
  TensorList b = model.buffers();
  t.insert(t.end(), b.begin(), b.end());
  return t;
}

Model read_checkpoint(const std::string& path, const NetworkConfig* expected, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("'" + path + "' is not a checkpoint");
  const auto header_len = read_pod<std::uint64_t>(in, path);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint '" + path + "' is truncated");
  const json h = json::parse(header);
  const NetworkConfig cfg = config_from_json(h.at("config"));
  const std::string fp = h.at("fingerprint").get<std::string>();
  if (fp != cfg.fingerprint()) throw std::runtime_error("checkpoint '" + path + "' has a corrupted config");
  if (expected && expected->fingerprint() != fp) {
    throw std::runtime_error("checkpoint '" + path + "' was trained with config " + fp + " ('" + cfg.name +
                             "'), expected " + expected->fingerprint() + " ('" + expected->name + "')");
  }
  const auto seed = h.at("seed").get<std::uint64_t>();
  Model model(cfg, seed);
  TensorList tensors = all_tensors(model);
  const auto count = read_pod<std::uint64_t>(in, path);
  if (count != tensors.size()) {
    throw std::runtime_error("checkpoint '" + path + "' holds " + std::to_string(count) + " tensors, model has " +
                             std::to_string(tensors.size()));
  }
  std::map<std::string, Tensor> by_name;
  for (const NamedTensor& t : tensors) by_name[t.name] = t.tensor;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto numel = read_pod<std::uint64_t>(in, path);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint '" + path + "': unknown tensor '" + name + "'");
    Tensor target = it->second;
    if (static_cast<Index>(numel) != target.numel()) {
      throw std::runtime_error("checkpoint '" + path + "': tensor '" + name + "' has " + std::to_string(numel) +
                               " values, expected " + std::to_string(target.numel()));
    }
    in.read(reinterpret_cast<char*>(target.data()), static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint '" + path + "' is truncated");
  }
  if (info) {
    info->seed = seed;
    info->epoch = h.at("epoch").get<Index>();
    info->fingerprint = fp;
  }
  return model;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path, Index epoch) {
  json h;
  h["config"] = config_to_json(model.config());
  h["fingerprint"] = model.config().fingerprint();
  h["seed"] = model.seed();
  h["epoch"] = epoch;
  const std::string header = h.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 8);
  write_pod<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const TensorList tensors = all_tensors(model);
  write_pod<std::uint64_t>(out, tensors.size());
  for (const NamedTensor& t : tensors) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(t.tensor.numel()));
    out.write(reinterpret_cast<const char*>(t.tensor.data()), static_cast<std::streamsize>(t.tensor.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

Model load_checkpoint(const std::string& path, CheckpointInfo* info) { return read_checkpoint(path, nullptr, info); }

Model load_checkpoint(const std::string& path, const NetworkConfig& expected, CheckpointInfo* info) {
  return read_checkpoint(path, &expected, info);
}

}  // namespace d3net
