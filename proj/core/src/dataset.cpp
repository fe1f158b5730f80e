#include "qforest/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "qforest/error.hpp"

namespace qforest {

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError("truncated header in " + path);
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingPathError(path);
    return in;
}

}  // namespace

ImageDataset load_mnist(const std::string& image_path, const std::string& label_path) {
    std::ifstream img_in = open_binary(image_path);
    const std::uint32_t img_magic = read_be32(img_in, image_path);
    if (img_magic != 0x00000803u) {
        throw FormatError("bad magic in " + image_path + ": expected 0x00000803");
    }
    const std::uint32_t count = read_be32(img_in, image_path);
    const std::uint32_t rows = read_be32(img_in, image_path);
    const std::uint32_t cols = read_be32(img_in, image_path);
    if (rows != cols) {
        throw FormatError("non-square images in " + image_path);
    }

    std::ifstream lab_in = open_binary(label_path);
    const std::uint32_t lab_magic = read_be32(lab_in, label_path);
    if (lab_magic != 0x00000801u) {
        throw FormatError("bad magic in " + label_path + ": expected 0x00000801");
    }
    const std::uint32_t lab_count = read_be32(lab_in, label_path);
    if (lab_count != count) {
        throw FormatError("image/label count mismatch: " + std::to_string(count) + " vs " +
                          std::to_string(lab_count));
    }

    ImageDataset ds;
    ds.side = rows;
    ds.channels = 1;
    ds.num_classes = 10;
    ds.images.reserve(count);
    ds.labels.reserve(count);

    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img_in.read(reinterpret_cast<char*>(buf.data()),
                         static_cast<std::streamsize>(buf.size()))) {
            throw FormatError("truncated image payload in " + image_path);
        }
        Image img;
        img.side = rows;
        img.channels = 1;
        img.pix.resize(buf.size());
        for (std::size_t p = 0; p < buf.size(); ++p) img.pix[p] = buf[p] / 255.0;
        ds.images.push_back(std::move(img));

        char lab = 0;
        if (!lab_in.get(lab)) throw FormatError("truncated label payload in " + label_path);
        const int label = static_cast<unsigned char>(lab);
        if (label > 9) throw FormatError("label out of range in " + label_path);
        ds.labels.push_back(label);
    }
    return ds;
}

ImageDataset load_cifar10(const std::vector<std::string>& batch_paths) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kSide = 32;
    constexpr std::size_t kPlane = kSide * kSide;

    ImageDataset ds;
    ds.side = kSide;
    ds.channels = 3;
    ds.num_classes = 10;

    for (const std::string& path : batch_paths) {
        std::ifstream in = open_binary(path);
        in.seekg(0, std::ios::end);
        const std::streamoff file_size = in.tellg();
        in.seekg(0, std::ios::beg);
        if (file_size % static_cast<std::streamoff>(kRecord) != 0) {
            throw FormatError("file size of " + path + " (" + std::to_string(file_size) +
                              ") is not a multiple of 3073");
        }
        const std::size_t records = static_cast<std::size_t>(file_size) / kRecord;
        std::vector<unsigned char> rec(kRecord);
        for (std::size_t i = 0; i < records; ++i) {
            if (!in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
                throw FormatError("truncated record in " + path);
            }
            const int label = rec[0];
            if (label > 9) throw FormatError("label out of range in " + path);
            Image img;
            img.side = kSide;
            img.channels = 3;
            img.pix.resize(kPlane * 3);
            for (std::size_t r = 0; r < kSide; ++r) {
                for (std::size_t c = 0; c < kSide; ++c) {
                    const std::size_t p = r * kSide + c;
                    img.at(r, c, 0) = rec[1 + p] / 255.0;
                    img.at(r, c, 1) = rec[1 + kPlane + p] / 255.0;
                    img.at(r, c, 2) = rec[1 + 2 * kPlane + p] / 255.0;
                }
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(label);
        }
    }
    return ds;
}

Image downscale_image(const Image& img, std::size_t target_side) {
    if (target_side == 0 || (target_side & (target_side - 1)) != 0) {
        throw ArgumentError("downscale target must be a power of two, got " +
                            std::to_string(target_side));
    }
    if (target_side > img.side) {
        throw ArgumentError("downscale target " + std::to_string(target_side) +
                            " exceeds source side " + std::to_string(img.side));
    }
    Image out;
    out.side = target_side;
    out.channels = img.channels;
    out.pix.assign(target_side * target_side * img.channels, 0.0);
    if (target_side == img.side) {
        out.pix = img.pix;
        return out;
    }

    if (img.side % target_side == 0) {
        // Exact block mean.
        const std::size_t block = img.side / target_side;
        const double inv = 1.0 / static_cast<double>(block * block);
        for (std::size_t r = 0; r < target_side; ++r) {
            for (std::size_t c = 0; c < target_side; ++c) {
                for (std::size_t ch = 0; ch < img.channels; ++ch) {
                    double sum = 0.0;
                    for (std::size_t dr = 0; dr < block; ++dr) {
                        for (std::size_t dc = 0; dc < block; ++dc) {
                            sum += img.at(r * block + dr, c * block + dc, ch);
                        }
                    }
                    out.at(r, c, ch) = sum * inv;
                }
            }
        }
        return out;
    }

    // Bilinear interpolation at target-pixel centers.
    const double ratio = static_cast<double>(img.side) / static_cast<double>(target_side);
    const double max_coord = static_cast<double>(img.side - 1);
    for (std::size_t r = 0; r < target_side; ++r) {
        for (std::size_t c = 0; c < target_side; ++c) {
            double y = (static_cast<double>(r) + 0.5) * ratio - 0.5;
            double x = (static_cast<double>(c) + 0.5) * ratio - 0.5;
            y = std::min(std::max(y, 0.0), max_coord);
            x = std::min(std::max(x, 0.0), max_coord);
            const std::size_t y0 = static_cast<std::size_t>(y);
            const std::size_t x0 = static_cast<std::size_t>(x);
            const std::size_t y1 = std::min(y0 + 1, img.side - 1);
            const std::size_t x1 = std::min(x0 + 1, img.side - 1);
            const double fy = y - static_cast<double>(y0);
            const double fx = x - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                const double top = (1.0 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch);
                const double bot = (1.0 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch);
                out.at(r, c, ch) = (1.0 - fy) * top + fy * bot;
            }
        }
    }
    return out;
}

ImageDataset downscale(const ImageDataset& ds, std::size_t target_side) {
    ImageDataset out;
    out.side = target_side;
    out.channels = ds.channels;
    out.num_classes = ds.num_classes;
    out.labels = ds.labels;
    out.images.reserve(ds.images.size());
    for (const Image& img : ds.images) out.images.push_back(downscale_image(img, target_side));
    return out;
}

Image cyclic_shift(const Image& img, int dv, int dh) {
    const int side = static_cast<int>(img.side);
    auto wrap = [side](int x) {
        const int m = x % side;
        return m < 0 ? m + side : m;
    };
    Image out;
    out.side = img.side;
    out.channels = img.channels;
    out.pix.resize(img.pix.size());
    for (int r = 0; r < side; ++r) {
        const int rr = wrap(r + dv);
        for (int c = 0; c < side; ++c) {
            const int cc = wrap(c + dh);
            for (std::size_t ch = 0; ch < img.channels; ++ch) {
                out.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc), ch) =
                    img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
            }
        }
    }
    return out;
}

std::vector<double> local_feature(const std::vector<double>& pixel) {
    if (pixel.empty()) throw ArgumentError("local_feature: empty pixel");
    std::vector<double> feat{1.0};
    for (double x : pixel) {
        if (!(x >= 0.0 && x <= 1.0)) {
            throw ArgumentError("local_feature: channel value " + std::to_string(x) +
                                " outside [0,1]");
        }
        const double norm = std::sqrt(x * x + (1.0 - x) * (1.0 - x));
        const double c0 = x / norm;
        const double c1 = (1.0 - x) / norm;
        std::vector<double> next(feat.size() * 2);
        for (std::size_t i = 0; i < feat.size(); ++i) {
            next[2 * i] = feat[i] * c0;
            next[2 * i + 1] = feat[i] * c1;
        }
        feat = std::move(next);
    }
    return feat;
}

}  // namespace qforest
