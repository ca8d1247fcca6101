#pragma once

// File formats.
//
// Tensor file (binary):
//   "OTSR1\n"
//   "dtype=f64 dims=<d> shape=<n1>,...,<nd> order=row-major endian=little\n"
//   prod(shape) IEEE-754 doubles, little-endian, row-major.
//
// Label file: plain PGM (P2), "P2\n<W> <H>\n<maxval>\n" then H rows of W
// values in 1..maxval; maxval is the class count K. '#' comments are
// accepted on read.

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ordseg/autodiff.hpp"
#include "ordseg/core.hpp"
#include "ordseg/error.hpp"

namespace ordseg::io {

inline constexpr std::string_view kTensorMagic = "OTSR1";

namespace detail {

inline std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xffu) << (8 * (7 - b));
        return r;
    } else {
        return v;
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string tensor_header(const ad::Shape& shape) {
    std::string s = "dtype=f64 dims=" + std::to_string(shape.size()) + " shape=";
    for (std::size_t d = 0; d < shape.size(); ++d) s += (d ? "," : "") + std::to_string(shape[d]);
    return s + " order=row-major endian=little";
}

}  // namespace detail

inline std::string encode_tensor(const ad::Tensor& t) {
    if (!t.all_finite()) throw ValidationError("refusing to write non-finite tensor values");
    std::string out(kTensorMagic);
    out += '\n';
    out += detail::tensor_header(t.shape());
    out += '\n';
    const std::size_t base = out.size();
    out.resize(base + 8 * t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const std::uint64_t bits = detail::to_little(std::bit_cast<std::uint64_t>(t[i]));
        std::memcpy(out.data() + base + 8 * i, &bits, 8);
    }
    return out;
}

inline ad::Tensor decode_tensor(const std::string& bytes) {
    const std::string magic_line = std::string(kTensorMagic) + "\n";
    if (bytes.compare(0, magic_line.size(), magic_line) != 0) throw FormatError("bad magic at byte offset 0");
    const std::size_t header_start = magic_line.size();
    const std::size_t header_end = bytes.find('\n', header_start);
    if (header_end == std::string::npos) throw FormatError("unterminated header at byte offset " + std::to_string(header_start));
    const std::string header = bytes.substr(header_start, header_end - header_start);

    std::istringstream fields(header);
    std::string dtype, dims, shape_field, order, endian;
    fields >> dtype >> dims >> shape_field >> order >> endian;
    std::string extra;
    if (dtype != "dtype=f64" || dims.rfind("dims=", 0) != 0 || shape_field.rfind("shape=", 0) != 0 ||
        order != "order=row-major" || endian != "endian=little" || (fields >> extra)) {
        throw FormatError("malformed header at byte offset " + std::to_string(header_start) + ": '" + header + "'");
    }
    ad::Shape shape;
    std::size_t rank = 0;
    try {
        rank = std::stoul(dims.substr(5));
        std::istringstream dims_in(shape_field.substr(6));
        std::string part;
        while (std::getline(dims_in, part, ',')) {
            if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) throw std::invalid_argument(part);
            shape.push_back(std::stoul(part));
        }
    } catch (const std::exception&) {
        throw FormatError("malformed shape at byte offset " + std::to_string(header_start));
    }
    if (shape.size() != rank || rank == 0) {
        throw FormatError("dims=" + std::to_string(rank) + " disagrees with shape at byte offset " + std::to_string(header_start));
    }
    const std::size_t payload_start = header_end + 1;
    const std::size_t expected = 8 * ad::Tensor::count(shape);
    const std::size_t actual = bytes.size() - payload_start;
    if (actual != expected) {
        throw FormatError("payload is " + std::to_string(actual) + " bytes, expected " + std::to_string(expected) +
                          " (payload starts at byte offset " + std::to_string(payload_start) + ")");
    }
    std::vector<double> data(ad::Tensor::count(shape));
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes.data() + payload_start + 8 * i, 8);
        data[i] = std::bit_cast<double>(detail::to_little(bits));
    }
    return ad::Tensor(std::move(shape), std::move(data));
}

inline void write_tensor(const std::filesystem::path& path, const ad::Tensor& t) {
    const std::string bytes = encode_tensor(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ad::Tensor read_tensor(const std::filesystem::path& path) {
    try {
        return decode_tensor(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline bool is_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    char buf[5] = {};
    in.read(buf, 5);
    return in.gcount() == 5 && std::string_view(buf, 5) == kTensorMagic;
}

inline std::string encode_labels(const LabelMap& labels, int k_classes) {
    if (labels.max_label() > k_classes) throw ValidationError("label exceeds the class count");
    std::string out = "P2\n" + std::to_string(labels.width()) + " " + std::to_string(labels.height()) + "\n" +
                      std::to_string(k_classes) + "\n";
    for (int i = 0; i < labels.height(); ++i) {
        for (int j = 0; j < labels.width(); ++j) {
            if (j) out += ' ';
            out += std::to_string(labels(i, j));
        }
        out += '\n';
    }
    return out;
}

struct LabelFile {
    LabelMap labels;
    int k_classes;
};

inline LabelFile decode_labels(const std::string& text) {
    std::size_t pos = 0;
    std::size_t line = 1;
    // Next whitespace-delimited token, skipping '#' comments; records its line.
    auto next = [&](const char* what) {
        for (;;) {
            while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) {
                if (text[pos] == '\n') ++line;
                ++pos;
            }
            if (pos < text.size() && text[pos] == '#') {
                while (pos < text.size() && text[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= text.size()) throw FormatError(std::string("unexpected end of file reading ") + what);
        const std::size_t start = pos;
        while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        return text.substr(start, pos - start);
    };
    auto number = [&](const char* what) {
        const std::string tok = next(what);
        if (tok.empty() || tok.size() > 9 || tok.find_first_not_of("0123456789") != std::string::npos) {
            throw FormatError(std::string("invalid ") + what + " '" + tok + "' on line " + std::to_string(line));
        }
        return std::stoi(tok);
    };
    if (next("magic") != "P2") throw FormatError("bad magic on line 1 (expected P2)");
    const int width = number("width");
    const int height = number("height");
    const int maxval = number("maxval");
    if (width <= 0 || height <= 0) throw FormatError("non-positive dimensions on line " + std::to_string(line));
    if (maxval < 2) throw FormatError("maxval must be >= 2 on line " + std::to_string(line));
    std::vector<int> values(static_cast<std::size_t>(width) * height);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            const int v = number("pixel");
            if (v < 1 || v > maxval) {
                throw FormatError("pixel value " + std::to_string(v) + " at row " + std::to_string(i) + " col " +
                                  std::to_string(j) + " (line " + std::to_string(line) + ") outside 1.." +
                                  std::to_string(maxval));
            }
            values[static_cast<std::size_t>(i) * width + j] = v;
        }
    }
    return {LabelMap(height, width, std::move(values)), maxval};
}

inline void write_labels(const std::filesystem::path& path, const LabelMap& labels, int k_classes) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << encode_labels(labels, k_classes);
}

inline LabelFile read_labels(const std::filesystem::path& path) {
    try {
        return decode_labels(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace ordseg::io
