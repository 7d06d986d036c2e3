#include "waferscope/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "waferscope/error.hpp"

namespace waferscope {
namespace {

constexpr char kMagic[8] = {'W', 'S', 'C', 'K', 'P', 'T', '\r', '\n'};

enum class SectionKind : std::uint8_t { Text = 0, F64 = 1 };

struct Section {
  SectionKind kind = SectionKind::Text;
  std::string text;
  std::vector<double> values;
};

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xff));
}

void put_f64(std::string& out, double d) { put_le(out, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t fnv1a(const char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Cursor {
 public:
  explicit Cursor(const std::string& s) : s_(s) {}

  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + b])) << (8 * b);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

std::string bn_name(std::size_t b, const char* field) { return "block" + std::to_string(b) + ".bn." + field; }

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ck) {
  std::vector<std::pair<std::string, Section>> sections;
  Json header;
  header["network"] = to_json(ck.model.config);
  Json classes = Json::array();
  for (ClassLabel l : ck.classes) classes.push_back(std::string(label_name(l)));
  header["classes"] = classes;
  header["provenance"] = ck.provenance;
  sections.push_back({"config", Section{SectionKind::Text, header.dump(), {}}});
  for_each_parameter(ck.model, [&](const std::string& name, std::span<const double> v) {
    sections.push_back({"param." + name, Section{SectionKind::F64, {}, std::vector<double>(v.begin(), v.end())}});
  });
  for (std::size_t b = 0; b < ck.model.norms.size(); ++b) {
    const auto& bn = ck.model.norms[b];
    sections.push_back({bn_name(b, "running_mean"), Section{SectionKind::F64, {}, bn.running_mean}});
    sections.push_back({bn_name(b, "running_var"), Section{SectionKind::F64, {}, bn.running_var}});
  }
  if (ck.noise) {
    const auto c = ck.noise->counts();
    sections.push_back({"noise_counts", Section{SectionKind::F64, {}, std::vector<double>(c.begin(), c.end())}});
  }

  std::string out(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, s] : sections) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(s.kind));
    if (s.kind == SectionKind::Text) {
      put_le<std::uint64_t>(out, s.text.size());
      out += s.text;
    } else {
      put_le<std::uint64_t>(out, s.values.size());
      for (double d : s.values) put_f64(out, d);
    }
  }
  put_le<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw DataError("not a waferscope checkpoint");
  const std::size_t body = bytes.size() - 8;
  {
    const std::string tail = bytes.substr(body);
    Cursor tc(tail);
    if (tc.le<std::uint64_t>() != fnv1a(bytes.data(), body)) throw DataError("checkpoint checksum mismatch");
  }
  const std::string payload = bytes.substr(0, body);
  Cursor c(payload);
  c.bytes(sizeof kMagic);
  const auto version = c.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto n = c.le<std::uint32_t>();
  std::map<std::string, Section> sections;
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto len = c.le<std::uint32_t>();
    std::string name = c.bytes(len);
    Section s;
    const auto kind = c.le<std::uint8_t>();
    if (kind > 1) throw DataError("checkpoint section \"" + name + "\" has unknown kind");
    s.kind = static_cast<SectionKind>(kind);
    const auto count = c.le<std::uint64_t>();
    if (s.kind == SectionKind::Text) {
      s.text = c.bytes(count);
    } else {
      if (count > (payload.size() - c.pos()) / 8) throw DataError("checkpoint section \"" + name + "\" truncated");
      s.values.resize(count);
      for (auto& d : s.values) d = std::bit_cast<double>(c.le<std::uint64_t>());
    }
    if (!sections.emplace(name, std::move(s)).second) throw DataError("duplicate checkpoint section \"" + name + "\"");
  }
  if (c.pos() != payload.size()) throw DataError("trailing bytes in checkpoint");

  auto take = [&](const std::string& name, SectionKind kind) -> Section& {
    const auto it = sections.find(name);
    if (it == sections.end()) throw DataError("checkpoint is missing section \"" + name + "\"");
    if (it->second.kind != kind) throw DataError("checkpoint section \"" + name + "\" has the wrong kind");
    return it->second;
  };

  Checkpoint ck;
  Json header;
  try {
    header = Json::parse(take("config", SectionKind::Text).text);
    const SscnConfig net = sscn_config_from_json(header.at("network"));
    ck.model = build_network(net, net.seed);
    for (const auto& l : header.at("classes")) ck.classes.push_back(label_from_name(l.get<std::string>()));
    ck.provenance = header.value("provenance", Json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config section is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint holds an invalid network config: ") + e.what());
  }
  if (static_cast<int>(ck.classes.size()) != ck.model.config.num_classes)
    throw DataError("checkpoint class list does not match the network head");
  for_each_parameter(ck.model, [&](const std::string& name, std::span<double> v) {
    const auto& s = take("param." + name, SectionKind::F64);
    if (s.values.size() != v.size()) throw DataError("checkpoint parameter \"" + name + "\" has the wrong size");
    std::copy(s.values.begin(), s.values.end(), v.begin());
  });
  for (std::size_t b = 0; b < ck.model.norms.size(); ++b) {
    auto& bn = ck.model.norms[b];
    for (auto [field, dst] : {std::pair{"running_mean", &bn.running_mean}, std::pair{"running_var", &bn.running_var}}) {
      const auto& s = take(bn_name(b, field), SectionKind::F64);
      if (s.values.size() != dst->size()) throw DataError("checkpoint " + bn_name(b, field) + " has the wrong size");
      *dst = s.values;
    }
  }
  if (const auto it = sections.find("noise_counts"); it != sections.end()) {
    std::vector<int> counts;
    for (double d : it->second.values) counts.push_back(static_cast<int>(d));
    try {
      ck.noise.emplace(std::move(counts));
    } catch (const ContractError& e) {
      throw DataError(std::string("checkpoint noise counts are invalid: ") + e.what());
    }
  }
  ck.model.set_mode(NormMode::Eval);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string b = checkpoint_bytes(ck);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace waferscope
