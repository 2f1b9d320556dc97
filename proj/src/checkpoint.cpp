#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <optional>
#include <set>
#include <sstream>

#include "evssl/formats.hpp"
#include "evssl/training.hpp"

namespace evssl {

void add_parameters(Checkpoint& checkpoint, const std::string& prefix, const std::vector<Parameter*>& params) {
  for (const Parameter* p : params) {
    checkpoint.tensors.emplace_back(prefix + p->name, Tensor(p->tensor.shape(), p->tensor.values()));
  }
}

bool has_prefix(const Checkpoint& checkpoint, const std::string& prefix) {
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.starts_with(prefix)) return true;
  }
  return false;
}

void load_parameters(const Checkpoint& checkpoint, const std::string& prefix,
                     const std::vector<Parameter*>& params) {
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : params) by_name.emplace(prefix + p->name, p);

  std::string unknown;
  std::set<std::string> seen;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (!name.starts_with(prefix)) continue;
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      unknown += (unknown.empty() ? "" : ", ") + name;
      continue;
    }
    if (tensor.shape() != it->second->tensor.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + to_string(tensor.shape()) +
                        ", network expects " + to_string(it->second->tensor.shape()));
    }
    seen.insert(name);
  }
  if (!unknown.empty()) throw FormatError("checkpoint has unknown parameters: " + unknown);
  for (const auto& [name, p] : by_name) {
    if (!seen.contains(name)) throw FormatError("checkpoint is missing parameter '" + name + "'");
  }
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (!name.starts_with(prefix)) continue;
    Parameter* p = by_name.at(name);
    p->tensor.mutable_values() = tensor.values();
  }
}

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(T)) {
    throw FormatError(std::string("truncated checkpoint while reading ") + what);
  }
  return value;
}

std::string take_bytes(std::istream& in, std::uint64_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(in.gcount()) != n) {
    throw FormatError(std::string("truncated checkpoint while reading ") + what);
  }
  return s;
}

// Removes every `step = N` line from `text`; returns the last N seen.
std::optional<std::uint64_t> strip_step(std::string& text) {
  std::optional<std::uint64_t> step;
  std::istringstream lines(text);
  std::string line, kept;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      std::istringstream key(line.substr(0, eq)), value(line.substr(eq + 1));
      std::string k, rest;
      std::uint64_t n = 0;
      if (key >> k && k == "step" && !(key >> rest) && value >> n && !(value >> rest)) {
        step = n;
        continue;
      }
    }
    kept += line + '\n';
  }
  text = std::move(kept);
  return step;
}

}  // namespace

void encode_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out.write("CKP1", 4);
  put(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.size() > 0xFFFF) throw FormatError("parameter name too long: " + name);
    put(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint8_t>(tensor.rank()));
    for (Eigen::Index d : tensor.shape()) put(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  // Any stale step line in the config is replaced by the authoritative counter.
  std::string text = checkpoint.config;
  strip_step(text);
  text += "step = " + std::to_string(checkpoint.step) + "\n";
  put(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

Checkpoint decode_checkpoint(std::istream& in) {
  if (take_bytes(in, 4, "magic") != "CKP1") throw FormatError("not a CKP1 checkpoint (bad magic)");
  Checkpoint checkpoint;
  const auto count = take<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_length = take<std::uint16_t>(in, "name length");
    std::string name = take_bytes(in, name_length, "name");
    const auto rank = take<std::uint8_t>(in, "rank");
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(take<std::uint32_t>(in, "dimension"));
    Eigen::ArrayXd values(element_count(shape));
    const std::string bytes = take_bytes(in, static_cast<std::uint64_t>(values.size()) * sizeof(double), "data");
    std::memcpy(values.data(), bytes.data(), bytes.size());
    checkpoint.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const auto text_length = take<std::uint64_t>(in, "config length");
  if (text_length > (std::uint64_t{1} << 30)) throw FormatError("implausible checkpoint config length");
  std::string text = take_bytes(in, text_length, "config");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");

  checkpoint.step = strip_step(text).value_or(0);
  checkpoint.config = std::move(text);
  return checkpoint;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_atomic(path, [&](std::ostream& out) { encode_checkpoint(out, checkpoint); });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return decode_checkpoint(in);
}

}  // namespace evssl
