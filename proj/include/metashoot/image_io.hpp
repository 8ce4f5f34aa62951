#pragma once

// Grayscale image files: binary PGM (P5, 8- or 16-bit; plain P2 is also
// read) and PNG through libpng's simplified API. Saving clamps to [0, 1]
// and quantizes to 8 bits.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "metashoot/error.hpp"
#include "metashoot/image_field.hpp"

namespace metashoot {

enum class ImageFormat { Pgm, Png };

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw NotFoundError("image not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open image: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PnmHeaderReader {
public:
    PnmHeaderReader(const std::vector<unsigned char>& bytes, std::size_t pos)
        : bytes_(bytes), pos_(pos) {}

    long next_int() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
            throw FormatError("corrupt PGM header");
        }
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > 1'000'000'000L) throw FormatError("PGM header value out of range");
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance() { ++pos_; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& bytes_;
    std::size_t pos_;
};

inline ScalarField decode_pgm(const std::vector<unsigned char>& bytes, bool normalize) {
    const bool binary = bytes[1] == '5';
    PnmHeaderReader hdr(bytes, 2);
    const long width = hdr.next_int();
    const long height = hdr.next_int();
    const long maxval = hdr.next_int();
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
        throw FormatError("invalid PGM dimensions or maxval");
    }
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    std::vector<double> values(count);
    const double scale = normalize ? 1.0 / static_cast<double>(maxval) : 1.0;
    if (binary) {
        hdr.advance();  // single whitespace after maxval
        const std::size_t bps = maxval > 255 ? 2 : 1;
        const std::size_t start = hdr.pos();
        if (bytes.size() < start || bytes.size() - start < count * bps) {
            throw FormatError("truncated PGM pixel data");
        }
        for (std::size_t i = 0; i < count; ++i) {
            const unsigned raw = bps == 1 ? bytes[start + i]
                                          : (static_cast<unsigned>(bytes[start + 2 * i]) << 8) |
                                                bytes[start + 2 * i + 1];
            values[i] = raw * scale;
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) values[i] = hdr.next_int() * scale;
    }
    return {static_cast<int>(width), static_cast<int>(height), std::move(values)};
}

inline ScalarField decode_png(const std::vector<unsigned char>& bytes, bool normalize) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw FormatError(std::string("corrupt PNG: ") + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("corrupt PNG: " + msg);
    }
    const double scale = normalize ? 1.0 / 255.0 : 1.0;
    std::vector<double> values(buffer.size());
    std::transform(buffer.begin(), buffer.end(), values.begin(),
                   [scale](unsigned char c) { return c * scale; });
    return {static_cast<int>(image.width), static_cast<int>(image.height), std::move(values)};
}

inline std::vector<unsigned char> quantize(const ScalarField& field) {
    std::vector<unsigned char> out(field.values().size());
    std::transform(field.values().begin(), field.values().end(), out.begin(), [](double v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    });
    return out;
}

}  // namespace detail

inline ImageFormat format_from_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm") return ImageFormat::Pgm;
    if (ext == ".png") return ImageFormat::Png;
    throw FormatError("unsupported image extension '" + ext + "' (expected .pgm or .png)");
}

inline const char* extension(ImageFormat f) { return f == ImageFormat::Pgm ? ".pgm" : ".png"; }

/// Reads a grayscale image. With `normalize`, samples are divided by the
/// format's maximum value so they land in [0, 1].
inline ScalarField load_image(const std::filesystem::path& path, bool normalize = true) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) {
        return detail::decode_pgm(bytes, normalize);
    }
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
        return detail::decode_png(bytes, normalize);
    }
    throw FormatError("unsupported image format: " + path.string());
}

inline void save_image(const ScalarField& field, const std::filesystem::path& path, ImageFormat format) {
    const auto pixels = detail::quantize(field);
    if (format == ImageFormat::Pgm) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write image: " + path.string());
        out << "P5\n" << field.width() << ' ' << field.height() << "\n255\n";
        out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        if (!out) throw std::runtime_error("write failed: " + path.string());
        return;
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(field.width());
    image.height = static_cast<png_uint_32>(field.height());
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
        throw std::runtime_error("PNG write failed: " + path.string() + ": " + image.message);
    }
}

inline void save_image(const ScalarField& field, const std::filesystem::path& path) {
    save_image(field, path, format_from_extension(path));
}

}  // namespace metashoot
