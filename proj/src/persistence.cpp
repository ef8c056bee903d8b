#include "detcal/persistence.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace detcal {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kFormatTag = "detcal-checkpoint";

std::uint64_t fnv1a64(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

json arch_to_json(const Architecture& a) {
  return {{"variant", a.variant == ArchVariant::kSetCnn ? "set_cnn" : "mlp"},
          {"input_features", a.input_features},
          {"max_rows", a.max_rows},
          {"num_classes", a.num_classes},
          {"feature_widths", a.feature_widths},
          {"classifier_hidden", a.classifier_hidden},
          {"embedding_dim", a.embedding_dim},
          {"pool", a.pool == PoolMode::kMasked ? "masked" : "literal"}};
}

Architecture arch_from_json(const json& j) {
  Architecture a;
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "set_cnn")
    a.variant = ArchVariant::kSetCnn;
  else if (variant == "mlp")
    a.variant = ArchVariant::kMlp;
  else
    throw FormatError("unknown architecture variant: " + variant);
  a.input_features = j.at("input_features").get<int>();
  a.max_rows = j.at("max_rows").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.feature_widths = j.at("feature_widths").get<std::vector<int>>();
  a.classifier_hidden = j.at("classifier_hidden").get<std::vector<int>>();
  a.embedding_dim = j.at("embedding_dim").get<int>();
  const std::string pool = j.at("pool").get<std::string>();
  if (pool == "masked")
    a.pool = PoolMode::kMasked;
  else if (pool == "literal")
    a.pool = PoolMode::kLiteral;
  else
    throw FormatError("unknown pool mode: " + pool);

  auto sane = [](int v) { return v >= 1 && v <= 1 << 20; };
  bool ok = sane(a.input_features) && sane(a.max_rows) && sane(a.num_classes) &&
            !a.feature_widths.empty() && a.embedding_dim >= 0 && a.embedding_dim <= 1 << 20;
  for (int w : a.feature_widths) ok = ok && sane(w);
  for (int w : a.classifier_hidden) ok = ok && sane(w);
  if (!ok) throw FormatError("architecture descriptor out of range");
  return a;
}

void append_layer(std::string& out, const DenseLayer& l) {
  out.append(reinterpret_cast<const char*>(l.weights.data()),
             sizeof(double) * l.weights.size());
  out.append(reinterpret_cast<const char*>(l.bias.data()), sizeof(double) * l.bias.size());
}

}  // namespace

std::string serialize_checkpoint(const ModelParameters& params) {
  std::string payload;
  payload.reserve(sizeof(double) * params.parameter_count());
  for (const auto& l : params.feature_layers) append_layer(payload, l);
  for (const auto& l : params.classifier) append_layer(payload, l);

  json header = {{"format", kFormatTag},
                 {"version", kCheckpointVersion},
                 {"arch", arch_to_json(params.arch)},
                 {"payload_doubles", params.parameter_count()},
                 {"checksum", fnv1a64(payload.data(), payload.size())}};
  std::string out = header.dump();
  out.push_back('\n');
  out += payload;
  return out;
}

ModelParameters deserialize_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("missing checkpoint header");
  json header = json::parse(bytes.substr(0, nl), nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw FormatError("unreadable checkpoint header");
  if (header.value("format", "") != kFormatTag)
    throw FormatError("not a checkpoint file");
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version));

  Architecture arch;
  std::size_t expect = 0;
  std::uint64_t checksum = 0;
  try {
    arch = arch_from_json(header.at("arch"));
    expect = header.at("payload_doubles").get<std::size_t>();
    checksum = header.at("checksum").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
  // Allocate via init to get the exact shapes, then overwrite the payload.
  ModelParameters params = init_parameters(arch, 0);
  if (expect != params.parameter_count())
    throw FormatError("payload size does not match architecture");
  const char* payload = bytes.data() + nl + 1;
  const std::size_t have = bytes.size() - nl - 1;
  if (have < expect * sizeof(double)) throw TruncatedError("truncated checkpoint payload");
  if (have > expect * sizeof(double)) throw FormatError("checkpoint has trailing bytes");

  if (fnv1a64(payload, expect * sizeof(double)) != checksum)
    throw ChecksumError("checkpoint payload checksum mismatch");

  std::size_t off = 0;
  auto read_layer = [&](DenseLayer& l) {
    std::memcpy(l.weights.data(), payload + off, sizeof(double) * l.weights.size());
    off += sizeof(double) * l.weights.size();
    std::memcpy(l.bias.data(), payload + off, sizeof(double) * l.bias.size());
    off += sizeof(double) * l.bias.size();
  };
  for (auto& l : params.feature_layers) read_layer(l);
  for (auto& l : params.classifier) read_layer(l);
  return params;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PersistError("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw PersistError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw PersistError("cannot rename " + tmp + " to " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_checkpoint(const ModelParameters& params, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(params));
}

ModelParameters load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace detcal
