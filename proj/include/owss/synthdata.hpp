#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "owss/data.hpp"

namespace owss {

// Toy segmentation scenes: flat-colored shapes on a dark background, with a
// one-pixel void margin around every object and a void image border. Known
// shapes are solid; the held-out unknown shapes are thin structures whose
// colors sit between two known class colors, so color alone cannot flag them.
struct ShapeClass {
  std::string shape;  // disk | square | triangle | stripe | ring | cross
  std::array<double, 3> color;
};

struct SceneSpec {
  int height = 32;
  int width = 32;
  std::vector<ShapeClass> known;    // index i -> class id i+1
  std::vector<ShapeClass> unknown;  // index j -> class id K+1+j
  int min_objects = 2;
  int max_objects = 4;
  double noise_sigma = 25.0;
  int void_border = 1;
  std::array<double, 3> background = {40.0, 40.0, 40.0};
  uint64_t seed = 7;
};

enum class SplitKind { Train, Val, Test };

std::string split_name(SplitKind kind);

// Default palette: K known shapes (disk, square, triangle, stripe) with
// well-separated colors and two unknown shapes (ring, cross) blended toward
// one known color each.
SceneSpec default_scene_spec(int num_known, int height, int width,
                             uint64_t seed);

// Lookup manifest: for every class, the known class with the nearest color
// mean (ties to the lower id). For the unknown shapes this coincides with the
// geometrically closest known shape by construction.
ClassManifest manifest_for(const SceneSpec& spec);

// Renders `count` scenes under dataset_dir/<split>/{images,labels}. Unknown
// shapes appear only in the test split, one object per scene, drawn last.
// Deterministic in (spec.seed, split, scene index).
void generate(const SceneSpec& spec, int count, SplitKind split,
              const std::string& dataset_dir);

// In-memory variant used by generate and by the tests.
SegScene render_scene(const SceneSpec& spec, SplitKind split, int index);

}  // namespace owss
