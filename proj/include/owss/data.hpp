#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace owss {

// Raw label ids as stored in the label maps.
constexpr uint8_t kVoidLabel = 255;

inline bool is_known_label(uint8_t lab, int num_known) {
  return lab >= 1 && lab <= num_known;
}
inline bool is_unknown_label(uint8_t lab, int num_known) {
  return lab != kVoidLabel && lab > num_known;
}

// One image with its per-pixel ground truth.
struct SegScene {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;     // H*W*3
  std::vector<uint8_t> labels;  // H*W, ids 1..K known, K+1.. unknown, 255 void
};

struct SegSplit {
  int height = 0;
  int width = 0;
  std::vector<SegScene> scenes;

  bool empty() const { return scenes.empty(); }
};

struct ClassInfo {
  int id = 0;
  std::string name;
  bool known = true;
  int most_similar = 0;  // class id; 0 when none
};

struct ClassManifest {
  std::vector<ClassInfo> classes;

  int num_known() const {
    int n = 0;
    for (const auto& c : classes) n += c.known;
    return n;
  }
  const ClassInfo* find(int id) const {
    for (const auto& c : classes)
      if (c.id == id) return &c;
    return nullptr;
  }
};

// Pixel histogram over known class ids (index 0 = class id 1).
std::vector<long> label_histogram(const SegSplit& split, int num_known);

}  // namespace owss
