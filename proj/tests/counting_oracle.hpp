#pragma once

// Layer-by-layer parameter and MAC arithmetic for the EFLD architecture,
// written out by hand from the architecture description. Independent of the
// library's executor-based tracing.

#include <cstdint>
#include <vector>

namespace efld::oracle {

struct Module {
  std::int64_t f_osa, n_osa, f_conv;
  bool separable;
};

struct Counts {
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

inline std::vector<Module> default_modules() {
  return {{4, 2, 8, false}, {8, 3, 8, true}, {16, 3, 16, true}, {16, 3, 32, true}};
}

/// efld_head = false counts a single linear layer from the feature vector.
inline Counts count(const std::vector<Module>& modules, std::int64_t input, std::int64_t decoder,
                    const std::vector<std::int64_t>& head_points, std::int64_t n_head = 3, std::int64_t f_head = 32,
                    bool efld_head = true) {
  Counts c;
  std::int64_t cin = 3, size = input;
  for (const Module& m : modules) {
    const std::int64_t out = (size + 1) / 2;
    const std::int64_t pixels = out * out;
    if (m.separable) {
      c.params += 9 * cin + cin;            // depthwise 3x3 + bias
      c.params += cin * m.f_conv + m.f_conv;  // pointwise + bias
      c.macs += (9 * cin + cin * m.f_conv) * pixels;
    } else {
      c.params += 9 * cin * m.f_conv + m.f_conv;
      c.macs += 9 * cin * m.f_conv * pixels;
    }
    std::int64_t chain_in = cin;
    for (std::int64_t j = 0; j < m.n_osa; ++j) {
      c.params += 9 * chain_in * m.f_osa + m.f_osa;
      c.macs += 9 * chain_in * m.f_osa * pixels;
      chain_in = m.f_osa;
    }
    cin = m.f_conv + m.n_osa * m.f_osa;
    size = out;
  }
  c.params += cin * decoder + decoder;                // 1x1 conv
  c.macs += cin * decoder * size * size;
  c.params += size * size * decoder + decoder;        // full-extent depthwise
  c.macs += size * size * decoder;
  for (std::int64_t k : head_points) {
    std::int64_t width = decoder;
    if (efld_head) {
      for (std::int64_t j = 0; j < n_head; ++j) {
        c.params += width * f_head + f_head;
        c.macs += width * f_head;
        width += f_head;
      }
    }
    c.params += width * 2 * k + 2 * k;
    c.macs += width * 2 * k;
  }
  return c;
}

}  // namespace efld::oracle
