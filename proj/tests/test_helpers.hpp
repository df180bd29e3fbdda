#pragma once

#include <vector>

#include "pseudolab/model.hpp"
#include "pseudolab/rng.hpp"
#include "pseudolab/tensor.hpp"

namespace testutil {

inline pseudolab::Tensor random_images(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                       pseudolab::Rng& rng) {
  pseudolab::Tensor t({n, c, h, w});
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

// Two classes on 1 x 4 x 4 images: bright left half vs bright right half.
struct Separable {
  pseudolab::Tensor images;
  std::vector<std::size_t> labels;
};

inline Separable separable_set(std::size_t n, pseudolab::Rng& rng) {
  Separable s{pseudolab::Tensor({n, 1, 4, 4}), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    s.labels[i] = label;
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const bool lit = (x < 2) == (label == 0);
        s.images.at({i, 0, y, x}) = (lit ? 0.8 : 0.2) + rng.uniform(-0.1, 0.1);
      }
  }
  return s;
}

inline pseudolab::ArchDescriptor tiny_cnn_arch() {
  pseudolab::ArchDescriptor a;
  a.kind = pseudolab::ModelKind::Cnn;
  a.channels = 1;
  a.height = 8;
  a.width = 8;
  a.classes = 2;
  a.conv = {pseudolab::ConvBlock{2, 3, 1, 1, true}};
  a.hidden = {4};
  return a;
}

}  // namespace testutil
