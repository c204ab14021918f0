#include "geca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geca {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'E', 'C', 'A'};

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const char* take(std::size_t n) {
    if (n > data_.size() - pos_) throw CorruptArtifact("truncated checkpoint " + origin_);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const TensorF& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw CorruptArtifact("checkpoint lacks tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf(kMagic, 4);
  put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string header = ckpt.header.dump();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(header.size()));
  buf += header;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) put<std::uint64_t>(buf, static_cast<std::uint64_t>(e));
    put<std::uint32_t>(buf, kDtypeF32);
    buf.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw InputError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path.string());
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CorruptArtifact("bad magic in " + path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CorruptArtifact("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  Checkpoint ckpt;
  const auto hlen = r.get<std::uint32_t>();
  const char* h = r.take(hlen);
  try {
    ckpt.header = nlohmann::json::parse(h, h + hlen);
  } catch (const nlohmann::json::exception&) {
    throw CorruptArtifact("unreadable checkpoint header in " + path.string());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto nlen = r.get<std::uint32_t>();
    std::string name(r.take(nlen), nlen);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CorruptArtifact("implausible tensor rank in " + path.string());
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>();
      if (e > r.remaining()) throw CorruptArtifact("implausible tensor extent in " + path.string());
      shape.push_back(static_cast<Index>(e));
      total *= e;
    }
    if (r.get<std::uint32_t>() != kDtypeF32) throw CorruptArtifact("unknown dtype in " + path.string());
    if (total > r.remaining() / sizeof(float)) throw CorruptArtifact("truncated checkpoint " + path.string());
    TensorF t(shape);
    std::memcpy(t.data(), r.take(total * sizeof(float)), total * sizeof(float));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CorruptArtifact("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

nlohmann::json to_json(const ThetaConfig& c) {
  return {{"n_in", c.layout.n_in},       {"n_gamma", c.layout.n_gamma}, {"n_out", c.layout.n_out},
          {"n_h", c.layout.n_h},         {"heads", c.heads},            {"cond_dim", c.cond_dim},
          {"freq_dim", c.freq_dim},      {"num_labels", c.num_labels}};
}

ThetaConfig theta_config_from_json(const nlohmann::json& j) {
  try {
    ThetaConfig c;
    c.layout.n_in = j.at("n_in").get<Index>();
    c.layout.n_gamma = j.at("n_gamma").get<Index>();
    c.layout.n_out = j.at("n_out").get<Index>();
    c.layout.n_h = j.at("n_h").get<Index>();
    c.heads = j.at("heads").get<Index>();
    c.cond_dim = j.at("cond_dim").get<Index>();
    c.freq_dim = j.at("freq_dim").get<Index>();
    c.num_labels = j.at("num_labels").get<Index>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact(std::string("bad model config in checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptArtifact(std::string("bad model config in checkpoint: ") + e.what());
  }
}

Checkpoint pack(const TrainState<float>& state, const Rng* rng, const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.header = {{"format", "geca-checkpoint"}, {"model", to_json(state.params.config)}, {"step", state.step},
                 {"adam_step", state.adam.step}, {"run", extra}};
  if (rng) {
    std::ostringstream os;
    os << *rng;
    ckpt.header["rng"] = os.str();
  }
  std::vector<std::string> names;
  state.params.for_each([&](const char* name, const TensorF& t) {
    names.emplace_back(name);
    ckpt.tensors.emplace_back(name, t);
  });
  for (std::size_t i = 0; i < state.adam.first_moment.size(); ++i) {
    ckpt.tensors.emplace_back("adam.m." + names.at(i), state.adam.first_moment[i]);
    ckpt.tensors.emplace_back("adam.v." + names.at(i), state.adam.second_moment[i]);
  }
  auto& lineages = ckpt.header["pool"] = nlohmann::json::array();
  for (std::size_t i = 0; i < state.pool.size(); ++i) {
    const auto& e = state.pool[i];
    lineages.push_back({{"t", e.t}, {"label", e.label.to_string()}});
    const std::string key = "pool." + std::to_string(i);
    ckpt.tensors.emplace_back(key + ".clean", e.clean);
    ckpt.tensors.emplace_back(key + ".noisy", e.noisy);
    ckpt.tensors.emplace_back(key + ".hidden", e.hidden);
  }
  return ckpt;
}

TrainState<float> unpack(const Checkpoint& ckpt, Rng* rng) {
  if (!ckpt.header.contains("model")) throw CorruptArtifact("checkpoint header lacks a model config");
  TrainState<float> state;
  state.params.config = theta_config_from_json(ckpt.header["model"]);
  Rng scratch(0);
  const ThetaParams<float> shapes = ThetaParams<float>::init(state.params.config, scratch);
  bool has_adam = false;
  state.params.for_each([&](const char* name, TensorF& t) {
    t = ckpt.find(name);
    Shape want;
    shapes.for_each([&](const char* n, const TensorF& s) {
      if (std::string(n) == name) want = s.shape();
    });
    if (t.shape() != want) throw CorruptArtifact(std::string("tensor '") + name + "' has the wrong shape");
    for (const auto& entry : ckpt.tensors) has_adam |= entry.first == std::string("adam.m.") + name;
  });
  if (has_adam) {
    state.params.for_each([&](const char* name, const TensorF& t) {
      state.adam.first_moment.push_back(ckpt.find(std::string("adam.m.") + name));
      state.adam.second_moment.push_back(ckpt.find(std::string("adam.v.") + name));
      if (state.adam.first_moment.back().shape() != t.shape() || state.adam.second_moment.back().shape() != t.shape())
        throw CorruptArtifact(std::string("optimizer state for '") + name + "' has the wrong shape");
    });
  }
  try {
    const auto lineages = ckpt.header.value("pool", nlohmann::json::array());
    const ChannelLayout& layout = state.params.config.layout;
    for (std::size_t i = 0; i < lineages.size(); ++i) {
      const std::string key = "pool." + std::to_string(i);
      Lineage<float> e{ckpt.find(key + ".clean"), Label::parse(lineages[i].at("label").get<std::string>()),
                       lineages[i].at("t").get<int>(), ckpt.find(key + ".noisy"), ckpt.find(key + ".hidden")};
      const bool ok = e.clean.rank() == 3 && e.clean.dim(2) == layout.n_in && e.noisy.shape() == e.clean.shape() &&
                      e.hidden.shape() == Shape{e.clean.dim(0), e.clean.dim(1), layout.n_h} && e.t >= 1;
      if (!ok) throw CorruptArtifact("pooled trajectory " + std::to_string(i) + " is malformed");
      state.pool.push_back(std::move(e));
    }
    state.step = ckpt.header.value("step", 0L);
    state.adam.step = ckpt.header.value("adam_step", 0L);
    if (rng && ckpt.header.contains("rng")) {
      std::istringstream is(ckpt.header["rng"].get<std::string>());
      is >> *rng;
      if (!is) throw CorruptArtifact("bad generator state in checkpoint");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArtifact(std::string("bad checkpoint header: ") + e.what());
  } catch (const InputError& e) {
    throw CorruptArtifact(std::string("bad label in checkpoint: ") + e.what());
  }
  return state;
}

void save_train_state(const std::filesystem::path& path, const TrainState<float>& state, const Rng* rng,
                      const nlohmann::json& extra) {
  write_checkpoint(path, pack(state, rng, extra));
}

TrainState<float> load_train_state(const std::filesystem::path& path, Rng* rng, nlohmann::json* header) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (header) *header = ckpt.header;
  return unpack(ckpt, rng);
}

}  // namespace geca
