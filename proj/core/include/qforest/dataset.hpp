#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace qforest {

/// A single image: side x side pixels, `channels` values per pixel, all in [0, 1].
/// Storage is row-major (row, column, channel).
struct Image {
    std::size_t side = 0;
    std::size_t channels = 1;
    std::vector<double> pix;

    double at(std::size_t r, std::size_t c, std::size_t ch) const {
        return pix[(r * side + c) * channels + ch];
    }
    double& at(std::size_t r, std::size_t c, std::size_t ch) {
        return pix[(r * side + c) * channels + ch];
    }
};

struct ImageDataset {
    std::size_t side = 0;
    std::size_t channels = 1;
    std::size_t num_classes = 10;
    std::vector<Image> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

/// MNIST IDX pair (big-endian magic 0x00000803 images / 0x00000801 labels).
/// Pixels are byte/255, labels 0-9.
ImageDataset load_mnist(const std::string& image_path, const std::string& label_path);

/// CIFAR-10 binary batches: 3073-byte records, 1 label byte then the R, G and B planes.
ImageDataset load_cifar10(const std::vector<std::string>& batch_paths);

/// Downscale every image to target_side x target_side. Exact block averaging when the
/// source side is a multiple of the target, bilinear interpolation at block centers
/// otherwise (the 28 -> 16 MNIST path).
ImageDataset downscale(const ImageDataset& ds, std::size_t target_side);
Image downscale_image(const Image& img, std::size_t target_side);

/// output[(r+dv) mod L][(c+dh) mod L] = input[r][c]; shifts taken modulo L.
Image cyclic_shift(const Image& img, int dv, int dh);

/// Local quantum feature of one pixel: phi(x) = (x, 1-x)/sqrt(x^2+(1-x)^2) per channel,
/// channels combined by Kronecker product (channel 0 most significant). Unit norm.
std::vector<double> local_feature(const std::vector<double>& pixel);

}  // namespace qforest
