#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "zsd/image.hpp"

namespace zsd {

/// Stride-2 2x2 convolutions with the fixed kernels
///   F1 = [[0, .5], [.5, 0]]  and  F2 = [[.5, 0], [0, .5]],
/// i.e. for each block [[a, b], [c, d]]: g1 = (b + c)/2, g2 = (a + d)/2.
std::pair<Image, Image> downsample_pair(const Image& y);
Image downsample_g1(const Image& y);
Image downsample_g2(const Image& y);

/// Gather map: out[i] = in[perm[i]].
using Permutation = std::vector<std::int32_t>;

Image apply_permutation(const Image& image, const Permutation& perm);

/// Euclidean local shuffle: in every 2x2 block (a b / c d) swap the pair with
/// the smallest intensity distance, scanning ab, ac, ad, bc, bd, cd and
/// keeping the first pair on ties.
Permutation els_permutation(const Image& y);
Image els(const Image& y);

/// Ablation counterpart of els: one uniformly drawn pair per block is swapped.
Permutation random_shuffle_permutation(int width, int height, std::uint64_t seed);
Image random_shuffle_2x2(const Image& y, std::uint64_t seed);

/// Sampled, truncated Gaussian (half-width ceil(3s)) normalized to unit sum.
struct Kernel2D {
  int radius = 0;
  std::vector<double> values;  // (2r+1)^2, row-major

  int side() const { return 2 * radius + 1; }
  double at(int u, int v) const { return values[static_cast<std::size_t>(v + radius) * side() + (u + radius)]; }
};

int gaussian_radius(double s);
std::vector<double> gaussian_kernel_1d(double s);
Kernel2D gaussian_kernel(double s);

/// Reflect-bordered Gaussian blur (separable).
Image gaussian_blur(const Image& y, double s);

/// G_s2 * y - G_s1 * y with reflect borders.
Image dog(const Image& y, double s1, double s2);

}  // namespace zsd
