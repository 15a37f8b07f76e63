#include "protood/npy.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace protood {

static_assert(std::endian::native == std::endian::little,
              "NPY codec assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "\x93NUMPY";
constexpr std::size_t kArrayAlign = 64;
constexpr std::size_t kGrowthAxisMaxDigits = 21;

// Minimal reader for the Python dict literal that forms an NPY header.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : text_(text) {}

  NpyHeader parse() {
    NpyHeader h;
    bool seen_descr = false, seen_order = false, seen_shape = false;
    skip_ws();
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') break;
      std::string key = read_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        h.dtype = parse_descr(read_string());
        seen_descr = true;
      } else if (key == "fortran_order") {
        if (read_word() != "False") {
          throw FormatError("Fortran-ordered NPY arrays are not supported");
        }
        seen_order = true;
      } else if (key == "shape") {
        h.shape = read_shape();
        seen_shape = true;
      } else {
        throw FormatError("unexpected NPY header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    if (!seen_descr || !seen_order || !seen_shape) {
      throw FormatError("NPY header is missing descr, fortran_order or shape");
    }
    return h;
  }

 private:
  char peek() const {
    if (pos_ >= text_.size()) throw FormatError("truncated NPY header");
    return text_[pos_];
  }
  void expect(char c) {
    if (peek() != c) {
      throw FormatError(std::string("malformed NPY header: expected '") + c +
                        "'");
    }
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }
  std::string read_string() {
    char quote = peek();
    if (quote != '\'' && quote != '"') {
      throw FormatError("malformed NPY header: expected a quoted string");
    }
    ++pos_;
    auto end = text_.find(quote, pos_);
    if (end == std::string_view::npos) throw FormatError("unterminated string");
    std::string s(text_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return s;
  }
  std::string read_word() {
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           std::isalpha(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }
  Shape read_shape() {
    Shape shape;
    expect('(');
    while (true) {
      skip_ws();
      if (peek() == ')') break;
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
      }
      if (start == pos_) throw FormatError("malformed NPY shape");
      shape.push_back(
          std::stoull(std::string(text_.substr(start, pos_ - start))));
      skip_ws();
      if (peek() == ',') {
        ++pos_;
      } else if (peek() != ')') {
        throw FormatError("malformed NPY shape");
      }
    }
    ++pos_;
    return shape;
  }
  static DType parse_descr(const std::string& d) {
    if (d == "<f4") return DType::kFloat32;
    if (d == "<f8") return DType::kFloat64;
    if (d == "<i8") return DType::kInt64;
    throw UnsupportedDtype("unsupported NPY dtype '" + d +
                           "' (expected <f4, <f8 or <i8)");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string_view descr_of(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return "<f4";
    case DType::kFloat64: return "<f8";
    case DType::kInt64: return "<i8";
  }
  return "";
}

std::string python_tuple(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

template <typename T>
Tensor decode_values(const NpyHeader& h, std::string_view payload,
                     const LoadOptions& opts) {
  std::vector<T> values(shape_numel(h.shape));
  std::memcpy(values.data(), payload.data(), payload.size());
  if constexpr (std::is_floating_point_v<T>) {
    if (!opts.allow_nonfinite) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
          throw DataError("non-finite value at flat index " +
                          std::to_string(i));
        }
      }
    }
  }
  return Tensor(h.shape, std::move(values));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

// Returns (preamble bytes, header length) for NPY versions 1.0 to 3.0.
std::pair<std::size_t, std::size_t> preamble(std::string_view bytes) {
  if (bytes.size() < 10 || bytes.substr(0, 6) != kMagic) {
    throw FormatError("missing NPY magic string");
  }
  const auto byte = [&](std::size_t i) {
    return static_cast<std::size_t>(static_cast<unsigned char>(bytes[i]));
  };
  switch (byte(6)) {
    case 1:
      return {10, byte(8) | (byte(9) << 8)};
    case 2:
    case 3:
      if (bytes.size() < 12) throw FormatError("truncated NPY preamble");
      return {12, byte(8) | (byte(9) << 8) | (byte(10) << 16) | (byte(11) << 24)};
    default:
      throw FormatError("unsupported NPY version " + std::to_string(byte(6)));
  }
}

}  // namespace

NpyHeader parse_npy_header(std::string_view bytes) {
  const auto [prefix, header_len] = preamble(bytes);
  if (bytes.size() < prefix + header_len) {
    throw FormatError("truncated NPY header");
  }
  NpyHeader h = HeaderParser(bytes.substr(prefix, header_len)).parse();
  h.data_offset = prefix + header_len;
  return h;
}

NpyHeader read_npy_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string buf(12, '\0');
  in.read(buf.data(), 12);
  buf.resize(static_cast<std::size_t>(in.gcount()));
  try {
    const auto [prefix, header_len] = preamble(buf);
    buf.resize(prefix + header_len);
    in.clear();
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    buf.resize(static_cast<std::size_t>(in.gcount()));
    return parse_npy_header(buf);
  } catch (const UnsupportedDtype& e) {
    throw UnsupportedDtype(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor decode_npy(std::string_view bytes, const LoadOptions& opts) {
  NpyHeader h = parse_npy_header(bytes);
  const std::size_t expected = shape_numel(h.shape) * dtype_size(h.dtype);
  std::string_view payload = bytes.substr(h.data_offset);
  if (payload.size() != expected) {
    throw FormatError("NPY payload has " + std::to_string(payload.size()) +
                      " bytes, shape " + shape_string(h.shape) + " needs " +
                      std::to_string(expected));
  }
  switch (h.dtype) {
    case DType::kFloat32: return decode_values<float>(h, payload, opts);
    case DType::kFloat64: return decode_values<double>(h, payload, opts);
    case DType::kInt64: return decode_values<std::int64_t>(h, payload, opts);
  }
  throw UnsupportedDtype("unreachable dtype");
}

std::string encode_npy(const Tensor& t) {
  std::string dict = "{'descr': '" + std::string(descr_of(t.dtype())) +
                     "', 'fortran_order': False, 'shape': " +
                     python_tuple(t.shape()) + ", }";
  if (!t.shape().empty()) {
    const std::size_t digits = std::to_string(t.shape()[0]).size();
    dict.append(kGrowthAxisMaxDigits - std::min(digits, kGrowthAxisMaxDigits),
                ' ');
  }
  const std::size_t hlen = dict.size() + 1;
  const std::size_t pad = kArrayAlign - ((10 + hlen) % kArrayAlign);
  dict.append(pad, ' ');
  dict.push_back('\n');
  if (dict.size() > 0xFFFF) throw FormatError("NPY header too long for v1.0");

  std::string out(kMagic);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(dict.size() & 0xFF));
  out.push_back(static_cast<char>((dict.size() >> 8) & 0xFF));
  out += dict;
  auto payload = t.bytes();
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size());
  return out;
}

Tensor load_tensor(const std::filesystem::path& path, const LoadOptions& opts) {
  const std::string bytes = read_file(path);
  try {
    return decode_npy(bytes, opts);
  } catch (const UnsupportedDtype& e) {
    throw UnsupportedDtype(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  const std::string bytes = encode_npy(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace protood
