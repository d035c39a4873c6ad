#include "efld/formats.hpp"

namespace efld {

void LandmarkFormat::validate() const {
  if (name.empty()) throw ConfigError("landmark format: empty name");
  if (points < 2) throw ConfigError("landmark format " + name + ": needs at least 2 points");
  const auto [l, r] = interocular;
  if (l < 0 || r < 0 || l >= points || r >= points || l == r) {
    throw ConfigError("landmark format " + name + ": invalid inter-ocular pair (" + std::to_string(l) +
                      ", " + std::to_string(r) + ") for " + std::to_string(points) + " points");
  }
}

FormatRegistry FormatRegistry::builtin() {
  FormatRegistry r;
  r.add({"p51", 51, {34, 35}});
  r.add({"p68", 68, {36, 45}});
  r.add({"p98", 98, {60, 72}});
  return r;
}

void FormatRegistry::add(LandmarkFormat format) {
  format.validate();
  std::string key = format.name;
  formats_.insert_or_assign(std::move(key), std::move(format));
}

const LandmarkFormat& FormatRegistry::at(const std::string& name) const {
  auto it = formats_.find(name);
  if (it == formats_.end()) {
    std::string known;
    for (const auto& [k, v] : formats_) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown landmark format '" + name + "' (registered: " + known + ")");
  }
  return it->second;
}

std::vector<std::string> FormatRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : formats_) out.push_back(k);
  return out;
}

}  // namespace efld
