#include "sgembed/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "sgembed/error.hpp"

namespace sgembed {

using nlohmann::json;

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw CheckpointError(ErrorKind::kCheckpointCorrupt, path.string() + ": " + what);
}

[[noreturn]] void mismatch(const std::filesystem::path& path, const std::string& what) {
  throw CheckpointError(ErrorKind::kCheckpointMismatch, path.string() + ": " + what);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

json config_to_json(const ModelConfig& c) {
  return {{"d", c.embed_dim},
          {"h", c.message_dim},
          {"D", c.state_dim},
          {"num_layers", c.num_layers},
          {"mlp_hidden", c.mlp_hidden},
          {"pool_include_trivial", c.pool_include_trivial},
          {"renormalize_embedding", c.renormalize_embedding}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.embed_dim = j.at("d").get<std::size_t>();
  c.message_dim = j.at("h").get<std::size_t>();
  c.state_dim = j.at("D").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.pool_include_trivial = j.at("pool_include_trivial").get<bool>();
  c.renormalize_embedding = j.at("renormalize_embedding").get<bool>();
  return c;
}

std::string describe(const ModelConfig& c) { return config_to_json(c).dump(); }

}  // namespace

void save_checkpoint(const GcnModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta) {
  std::vector<double> payload;
  json tensors = json::array();
  auto& mutable_model = const_cast<GcnModel&>(model);
  for (const auto& p : mutable_model.parameters()) {
    tensors.push_back({{"name", p.name},
                       {"shape", p.tensor->shape()},
                       {"offset", payload.size()},
                       {"count", p.tensor->size()}});
    payload.insert(payload.end(), p.tensor->data().begin(), p.tensor->data().end());
  }
  json norms = json::array();
  for (const auto& [name, stats] : model.batchnorm_stats()) {
    norms.push_back({{"name", name},
                     {"features", stats->running_mean.size()},
                     {"momentum", stats->momentum},
                     {"eps", stats->eps},
                     {"running_mean_offset", payload.size()},
                     {"running_var_offset", payload.size() + stats->running_mean.size()}});
    payload.insert(payload.end(), stats->running_mean.begin(), stats->running_mean.end());
    payload.insert(payload.end(), stats->running_var.begin(), stats->running_var.end());
  }
  json header = {{"format_version", kCheckpointVersion},
                 {"config", config_to_json(model.config)},
                 {"vocab_hash", hex64(model.vocab.hash())},
                 {"vocab",
                  {{"objects", model.vocab.object_labels()},
                   {"relationships", model.vocab.relationship_labels()}}},
                 {"tensors", tensors},
                 {"batchnorm", norms},
                 {"meta", meta},
                 {"payload_doubles", payload.size()}};
  const std::string header_text = header.dump();

  std::string bytes(kCheckpointMagic, kMagicLen);
  put_u64(bytes, header_text.size());
  bytes += header_text;
  bytes.reserve(bytes.size() + 8 * payload.size());
  for (double v : payload) put_u64(bytes, std::bit_cast<std::uint64_t>(v));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

GcnModel load_checkpoint(const std::filesystem::path& path, const CheckpointExpectations& expect,
                         CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kMagicLen + 8) corrupt(path, "file too short for a checkpoint");
  if (bytes.compare(0, kMagicLen - 2, kCheckpointMagic, kMagicLen - 2) != 0) {
    corrupt(path, "missing checkpoint magic");
  }
  if (bytes.compare(0, kMagicLen, kCheckpointMagic, kMagicLen) != 0) {
    mismatch(path, "unsupported checkpoint version");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + kMagicLen);
  const std::size_t header_start = kMagicLen + 8;
  if (header_len > bytes.size() - header_start) corrupt(path, "truncated header");

  json header;
  try {
    header = json::parse(bytes.substr(header_start, header_len));
  } catch (const json::exception& e) {
    corrupt(path, std::string("unreadable header: ") + e.what());
  }

  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      mismatch(path, "format version " + header.at("format_version").dump() + " != " +
                         std::to_string(kCheckpointVersion));
    }
    const std::size_t payload_start = header_start + header_len;
    const std::size_t payload_doubles = header.at("payload_doubles").get<std::size_t>();
    if (bytes.size() - payload_start != 8 * payload_doubles) {
      corrupt(path, "payload holds " + std::to_string(bytes.size() - payload_start) +
                        " bytes, header announces " + std::to_string(8 * payload_doubles));
    }
    auto read_doubles = [&](std::size_t offset, std::size_t count) {
      if (offset + count > payload_doubles) corrupt(path, "tensor extends past the payload");
      std::vector<double> out(count);
      for (std::size_t i = 0; i < count; ++i) {
        out[i] = std::bit_cast<double>(get_u64(bytes.data() + payload_start + 8 * (offset + i)));
      }
      return out;
    };

    const auto& v = header.at("vocab");
    Vocabulary vocab(v.at("objects").get<std::vector<std::string>>(),
                     v.at("relationships").get<std::vector<std::string>>(),
                     Vocabulary::Reserved::kOmit);
    const std::string stored_hash = header.at("vocab_hash").get<std::string>();
    if (hex64(vocab.hash()) != stored_hash) corrupt(path, "vocabulary does not match its hash");
    if (expect.vocab && hex64(expect.vocab->hash()) != stored_hash) {
      mismatch(path, "vocabulary hash " + stored_hash + " does not match the dataset vocabulary " +
                         hex64(expect.vocab->hash()));
    }
    const ModelConfig config = config_from_json(header.at("config"));
    if (expect.config && !(*expect.config == config)) {
      mismatch(path, "model configuration " + describe(config) + " differs from expected " +
                         describe(*expect.config));
    }

    GcnModel model = GcnModel::initialize(config, std::move(vocab), 0);
    auto params = model.parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) corrupt(path, "tensor count does not match the model");
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& t = tensors[k];
      if (t.at("name").get<std::string>() != params[k].name ||
          t.at("shape").get<Shape>() != params[k].tensor->shape()) {
        corrupt(path, "tensor " + std::to_string(k) + " (" + t.at("name").get<std::string>() +
                          ") does not match the model layout");
      }
      auto values = read_doubles(t.at("offset").get<std::size_t>(), params[k].tensor->size());
      std::copy(values.begin(), values.end(), params[k].tensor->data().begin());
    }
    auto stats = model.batchnorm_stats();
    const auto& norms = header.at("batchnorm");
    if (norms.size() != stats.size()) corrupt(path, "batch-norm count does not match the model");
    for (std::size_t k = 0; k < stats.size(); ++k) {
      const auto& n = norms[k];
      const std::size_t f = stats[k].second->running_mean.size();
      if (n.at("name").get<std::string>() != stats[k].first ||
          n.at("features").get<std::size_t>() != f) {
        corrupt(path, "batch-norm entry " + std::to_string(k) + " does not match the model");
      }
      stats[k].second->momentum = n.at("momentum").get<double>();
      stats[k].second->eps = n.at("eps").get<double>();
      stats[k].second->running_mean = read_doubles(n.at("running_mean_offset").get<std::size_t>(), f);
      stats[k].second->running_var = read_doubles(n.at("running_var_offset").get<std::size_t>(), f);
    }
    if (meta) *meta = header.value("meta", json::object()).get<CheckpointMeta>();
    return model;
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  }
}

}  // namespace sgembed
