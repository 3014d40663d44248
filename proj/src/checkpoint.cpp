#include "cpshield/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cpshield::ckpt {

namespace {

constexpr const char* kMagic = "cpshield-checkpoint v1";

void write_f32_le(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    const unsigned char bytes[4] = {static_cast<unsigned char>(u & 0xff),
                                    static_cast<unsigned char>((u >> 8) & 0xff),
                                    static_cast<unsigned char>((u >> 16) & 0xff),
                                    static_cast<unsigned char>((u >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(bytes), 4);
  }
}

void read_f32_le(std::istream& is, std::vector<float>& v) {
  for (float& f : v) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4)) {
      throw std::runtime_error("checkpoint: truncated parameter data");
    }
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[0]) |
                            (static_cast<std::uint32_t>(bytes[1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[3]) << 24);
    std::memcpy(&f, &u, 4);
  }
}

Header parse_header(std::istream& is, const std::string& path) {
  Header h;
  std::string line;
  if (!std::getline(is, line) || line != kMagic) {
    throw std::runtime_error("checkpoint: bad magic/version in " + path);
  }
  while (std::getline(is, line)) {
    if (line == "data") return h;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      ls >> h.kind;
    } else if (tag == "cfg") {
      std::string key, value;
      ls >> key >> value;
      h.config.emplace_back(key, value);
    } else if (tag == "param") {
      std::string name;
      int ndims = 0;
      ls >> name >> ndims;
      ad::Shape shape;
      for (int i = 0; i < ndims; ++i) {
        int d = 0;
        ls >> d;
        shape.push_back(d);
      }
      if (!ls || ndims <= 0) throw std::runtime_error("checkpoint: malformed param line in " + path);
      h.params.emplace_back(name, shape);
    } else {
      throw std::runtime_error("checkpoint: unknown header tag '" + tag + "' in " + path);
    }
  }
  throw std::runtime_error("checkpoint: missing data section in " + path);
}

}  // namespace

void save(const std::string& path, const std::string& kind,
          const std::vector<std::pair<std::string, std::string>>& config,
          const std::vector<ad::ParamRef>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os << kMagic << "\n";
  os << "kind " << kind << "\n";
  for (const auto& [k, v] : config) os << "cfg " << k << " " << v << "\n";
  for (const auto& p : params) {
    os << "param " << p.name << " " << p.shape.size();
    for (int d : p.shape) os << " " << d;
    os << "\n";
  }
  os << "data\n";
  for (const auto& p : params) write_f32_le(os, *p.data);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Header load(const std::string& path, const std::string& expected_kind,
            const std::vector<ad::ParamRef>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  Header h = parse_header(is, path);
  if (h.kind != expected_kind) {
    throw std::runtime_error("checkpoint: expected kind '" + expected_kind + "' but found '" +
                             h.kind + "' in " + path);
  }
  if (h.params.size() != params.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (h.params[i].first != params[i].name || h.params[i].second != params[i].shape) {
      throw std::runtime_error("checkpoint: parameter '" + params[i].name +
                               "' name/shape mismatch in " + path);
    }
    params[i].data->resize(static_cast<std::size_t>(ad::shape_numel(params[i].shape)));
    read_f32_le(is, *params[i].data);
  }
  return h;
}

Header peek(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return parse_header(is, path);
}

}  // namespace cpshield::ckpt
