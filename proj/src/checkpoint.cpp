#include "ews/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ews {

namespace {

void write_blob(std::ostream& os, const std::string& name,
                const std::string& payload) {
  os << "blob " << name << " " << payload.size() << "\n";
  os << payload << "\n";
}

std::string read_blob(std::istream& is, const std::string& want) {
  std::string tag, name;
  std::size_t n = 0;
  if (!(is >> tag >> name >> n) || tag != "blob" || name != want)
    throw std::runtime_error("checkpoint: expected blob " + want);
  is.get();  // newline after the header
  std::string payload(n, '\0');
  is.read(payload.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated blob " + want);
  is.get();  // trailing newline
  return payload;
}

void write_tensor_list(
    std::ostream& os, const std::string& name,
    const std::vector<std::pair<std::string, Tensor>>& list) {
  os << "tensors " << name << " " << list.size() << "\n";
  char buf[64];
  for (const auto& [tname, t] : list) {
    os << "tensor " << tname << " " << t.shape().size();
    for (int d : t.shape()) os << " " << d;
    os << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%a", static_cast<double>(t[i]));
      os << buf << (i + 1 == t.size() ? "" : " ");
    }
    os << "\n";
  }
}

std::vector<std::pair<std::string, Tensor>> read_tensor_list(
    std::istream& is, const std::string& want) {
  std::string tag, name;
  std::size_t count = 0;
  if (!(is >> tag >> name >> count) || tag != "tensors" || name != want)
    throw std::runtime_error("checkpoint: expected tensors " + want);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string tname;
    int ndim = 0;
    if (!(is >> tag >> tname >> ndim) || tag != "tensor")
      throw std::runtime_error("checkpoint: bad tensor header in " + want);
    std::vector<int> shape(static_cast<std::size_t>(ndim));
    for (int& d : shape) is >> d;
    Tensor t(shape);
    std::string word;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (!(is >> word))
        throw std::runtime_error("checkpoint: truncated tensor " + tname);
      t[j] = std::strtof(word.c_str(), nullptr);
    }
    out.emplace_back(std::move(tname), std::move(t));
  }
  return out;
}

}  // namespace

const Tensor* Checkpoint::find(
    const std::vector<std::pair<std::string, Tensor>>& list,
    const std::string& name) const {
  for (const auto& [n, t] : list)
    if (n == name) return &t;
  return nullptr;
}

std::string checkpoint_to_text(const Checkpoint& cp) {
  std::ostringstream os;
  os << "checkpoint v1\n";
  os << "step " << cp.step << "\n";
  write_blob(os, "topology", cp.topology_text);
  write_blob(os, "config", cp.config_text);
  write_blob(os, "controller", cp.controller_text);
  write_tensor_list(os, "params", cp.params);
  write_tensor_list(os, "norm_state", cp.norm_state);
  write_tensor_list(os, "optimizer", cp.optimizer);
  return os.str();
}

Checkpoint checkpoint_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string word, version;
  is >> word >> version;
  if (word != "checkpoint" || version != "v1")
    throw std::runtime_error("not a checkpoint record");
  Checkpoint cp;
  is >> word >> cp.step;
  if (word != "step") throw std::runtime_error("checkpoint: missing step");
  cp.topology_text = read_blob(is, "topology");
  cp.config_text = read_blob(is, "config");
  cp.controller_text = read_blob(is, "controller");
  cp.params = read_tensor_list(is, "params");
  cp.norm_state = read_tensor_list(is, "norm_state");
  cp.optimizer = read_tensor_list(is, "optimizer");
  return cp;
}

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    os << checkpoint_to_text(cp);
    if (!os) throw std::runtime_error("short checkpoint write " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return checkpoint_from_text(os.str());
}

}  // namespace ews
