#include "imamoe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "imamoe/errors.hpp"

namespace imamoe {

namespace {

constexpr char kMagic[8] = {'I', 'M', 'A', 'M', 'O', 'E', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ModelParams& params,
                     const ModelConfig& config, const MeasureSchema& schema,
                     const nlohmann::json& metadata, const TrainState* state) {
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  const auto refs = parameters(params);
  for (const ParamRef& r : refs) tensors.emplace_back(r.param->name, &r.param->value);
  nlohmann::json header;
  header["config"] = config.to_json();
  header["schema"] = schema.to_json();
  header["schema_fingerprint"] = schema.fingerprint();
  header["metadata"] = metadata;
  if (state != nullptr) {
    const OptimState& o = state->optim;
    header["state"] = {{"epochs_done", state->epochs_done},
                       {"step", o.step},
                       {"weight_decay", o.weight_decay},
                       {"beta1", o.beta1},
                       {"beta2", o.beta2},
                       {"epsilon", o.epsilon},
                       {"moments", !o.first_moment.empty()}};
    if (!o.first_moment.empty()) {
      if (o.first_moment.size() != refs.size()) {
        throw UsageError("optimizer state does not match the model's parameter list");
      }
      for (std::size_t i = 0; i < refs.size(); ++i) {
        tensors.emplace_back("adam.m/" + refs[i].param->name, &o.first_moment[i]);
      }
      for (std::size_t i = 0; i < refs.size(); ++i) {
        tensors.emplace_back("adam.v/" + refs[i].param->name, &o.second_moment[i]);
      }
    }
  }
  nlohmann::json directory = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    directory.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  }
  header["tensors"] = directory;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : tensors) {
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(m->size() * sizeof(Scalar)));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + " is not a checkpoint");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = read_pod<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("checkpoint truncated");

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.config = ModelConfig::from_json(header.at("config"));
    ck.schema = MeasureSchema::from_json(header.at("schema"));
    ck.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("corrupt checkpoint header: ") + ex.what());
  }
  if (header.value("schema_fingerprint", std::string()) != ck.schema.fingerprint()) {
    throw DataError("checkpoint schema does not match its stored fingerprint");
  }
  ck.params = build_model(ck.config, ck.schema);

  std::map<std::string, Matrix> stored;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    Matrix m(entry.at("rows").get<Index>(), entry.at("cols").get<Index>());
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Scalar)));
    if (!in) throw DataError("checkpoint truncated while reading " + name);
    stored.emplace(name, std::move(m));
  }

  auto take = [&stored](const std::string& name, const Matrix& like) -> Matrix {
    auto it = stored.find(name);
    if (it == stored.end()) throw DataError("checkpoint lacks tensor " + name);
    if (it->second.rows() != like.rows() || it->second.cols() != like.cols()) {
      throw DataError("checkpoint tensor " + name + " has shape " + shape_string(it->second) +
                      ", model expects " + shape_string(like));
    }
    return std::move(it->second);
  };
  const auto refs = parameters(ck.params);
  for (const ParamRef& r : refs) r.param->value = take(r.param->name, r.param->value);

  if (header.contains("state")) {
    const auto& s = header.at("state");
    TrainState state;
    state.epochs_done = s.at("epochs_done").get<int>();
    state.optim.step = s.at("step").get<std::int64_t>();
    state.optim.weight_decay = s.at("weight_decay").get<Scalar>();
    state.optim.beta1 = s.at("beta1").get<Scalar>();
    state.optim.beta2 = s.at("beta2").get<Scalar>();
    state.optim.epsilon = s.at("epsilon").get<Scalar>();
    if (s.at("moments").get<bool>()) {
      for (const ParamRef& r : refs) {
        state.optim.first_moment.push_back(take("adam.m/" + r.param->name, r.param->value));
      }
      for (const ParamRef& r : refs) {
        state.optim.second_moment.push_back(take("adam.v/" + r.param->name, r.param->value));
      }
    }
    ck.state = std::move(state);
  }
  return ck;
}

}  // namespace imamoe
