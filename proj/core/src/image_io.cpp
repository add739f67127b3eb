#include "meshreg/image_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace meshreg {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing: " + path.string());
    return out;
}

void save_f32(const Image& img, const std::filesystem::path& path) {
    auto out = open_out(path);
    nlohmann::ordered_json header;
    header["side"] = img.side();
    header["dtype"] = "f32le";
    out << header.dump() << '\n';
    std::vector<unsigned char> payload(std::size_t(img.size()) * 4);
    for (Eigen::Index p = 0; p < img.size(); ++p) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.values()[p]));
        for (int b = 0; b < 4; ++b) payload[std::size_t(p) * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    if (!out) throw IoError(path.string(), "write failed: " + path.string());
}

void save_pgm16(const Image& img, const std::filesystem::path& path) {
    auto out = open_out(path);
    const double lo = img.values().minCoeff();
    const double hi = img.values().maxCoeff();
    std::ostringstream head;
    head.precision(17);
    head << "P5\n# meshreg-range " << lo << ' ' << hi << '\n'
         << img.side() << ' ' << img.side() << "\n65535\n";
    out << head.str();
    std::vector<unsigned char> payload(std::size_t(img.size()) * 2);
    const double span = hi - lo;
    for (Eigen::Index p = 0; p < img.size(); ++p) {
        const double unit = span > 0.0 ? (img.values()[p] - lo) / span : 0.0;
        const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 65535.0));
        payload[std::size_t(p) * 2] = static_cast<unsigned char>(v >> 8);
        payload[std::size_t(p) * 2 + 1] = static_cast<unsigned char>(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    if (!out) throw IoError(path.string(), "write failed: " + path.string());
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image load_f32(const std::vector<unsigned char>& bytes) {
    const auto nl = std::find(bytes.begin(), bytes.end(), '\n');
    if (nl == bytes.end()) throw ParseError("header", "f32-raw: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin(), nl);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("header", std::string("f32-raw: header is not valid JSON: ") + e.what());
    }
    if (!header.contains("side") || !header["side"].is_number_integer())
        throw ParseError("side", "f32-raw: header field 'side' missing or not an integer");
    if (!header.contains("dtype") || header["dtype"] != "f32le")
        throw ParseError("dtype", "f32-raw: header field 'dtype' must be \"f32le\"");
    const long long side = header["side"].get<long long>();
    if (side < 2 || side > 65536) throw ParseError("side", "f32-raw: header field 'side' out of range");

    const std::size_t offset = std::size_t(nl - bytes.begin()) + 1;
    const std::size_t expected = std::size_t(side * side) * 4;
    if (bytes.size() - offset != expected)
        throw ParseError("payload", "f32-raw: payload has " + std::to_string(bytes.size() - offset) +
                                        " bytes, expected " + std::to_string(expected));
    const Grid grid{int(side)};
    Eigen::VectorXd values(grid.size());
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= std::uint32_t(bytes[offset + std::size_t(p) * 4 + b]) << (8 * b);
        values[p] = std::bit_cast<float>(bits);
    }
    if (!values.allFinite()) throw ParseError("payload", "f32-raw: non-finite value in payload");
    return Image(grid, std::move(values));
}

// Reads the next whitespace-delimited token of a PNM header, collecting
// comment lines on the way.
class PnmHeaderReader {
public:
    explicit PnmHeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    std::string token(const char* field) {
        for (;;) {
            while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
            if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
                std::string line;
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') line.push_back(char(bytes_[pos_++]));
                comments_.push_back(line);
                continue;
            }
            break;
        }
        std::string tok;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) tok.push_back(char(bytes_[pos_++]));
        if (tok.empty()) throw ParseError(field, std::string("pgm16: missing field '") + field + "'");
        return tok;
    }

    long long integer(const char* field) {
        const auto tok = token(field);
        try {
            std::size_t used = 0;
            const long long v = std::stoll(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            throw ParseError(field, std::string("pgm16: field '") + field + "' is not an integer: " + tok);
        }
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_offset() const { return pos_ + 1; }
    const std::vector<std::string>& comments() const { return comments_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
    std::vector<std::string> comments_;
};

Image load_pgm16(const std::vector<unsigned char>& bytes) {
    PnmHeaderReader reader(bytes);
    if (reader.token("magic") != "P5") throw ParseError("magic", "pgm16: expected magic P5");
    const long long width = reader.integer("width");
    const long long height = reader.integer("height");
    const long long maxval = reader.integer("maxval");
    if (width != height) throw ParseError("height", "pgm16: image must be square");
    if (width < 2 || width > 65536) throw ParseError("width", "pgm16: width out of range");
    if (maxval != 65535) throw ParseError("maxval", "pgm16: maxval must be 65535");

    double lo = 0.0;
    double hi = 1.0;
    for (const auto& c : reader.comments()) {
        std::istringstream line(c);
        std::string hash, key;
        line >> hash >> key;
        if (key != "meshreg-range") continue;
        if (!(line >> lo >> hi) || !(lo <= hi)) throw ParseError("range", "pgm16: malformed meshreg-range comment");
    }

    const std::size_t offset = reader.raster_offset();
    const std::size_t expected = std::size_t(width * width) * 2;
    if (offset > bytes.size() || bytes.size() - offset != expected)
        throw ParseError("payload", "pgm16: raster size mismatch, expected " + std::to_string(expected) + " bytes");
    const Grid grid{int(width)};
    Eigen::VectorXd values(grid.size());
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        const unsigned v = (unsigned(bytes[offset + std::size_t(p) * 2]) << 8) | bytes[offset + std::size_t(p) * 2 + 1];
        values[p] = lo + (hi - lo) * (v / 65535.0);
    }
    return Image(grid, std::move(values));
}

}  // namespace

void save_image(const Image& img, const std::filesystem::path& path, ImageFormat format) {
    switch (format) {
        case ImageFormat::f32_raw: save_f32(img, path); return;
        case ImageFormat::pgm16: save_pgm16(img, path); return;
    }
}

Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return load_pgm16(bytes);
    if (!bytes.empty() && bytes[0] == '{') return load_f32(bytes);
    throw ParseError("magic", "unrecognized image format: " + path.string());
}

}  // namespace meshreg
