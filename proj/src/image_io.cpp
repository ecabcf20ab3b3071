#include "gradfaith/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

namespace gradfaith {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(const std::string& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (start == pos) throw FormatError("unexpected end of PGM header", static_cast<long long>(pos));
  return buf.substr(start, pos - start);
}

int header_int(const std::string& buf, std::size_t& pos, const char* what) {
  const std::size_t at = pos;
  const std::string tok = next_token(buf, pos);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw FormatError(std::string("bad ") + what + " '" + tok + "' in PGM header",
                      static_cast<long long>(at));
  }
}

std::uint8_t quantize(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(std::lround(255.0 * c));
}

}  // namespace

Grid read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path.string() + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  const std::string magic = next_token(buf, pos);
  if (magic != "P5") throw FormatError("expected binary PGM magic P5, got '" + magic + "'", 0);
  const int width = header_int(buf, pos, "width");
  const int height = header_int(buf, pos, "height");
  const int maxval = header_int(buf, pos, "maxval");
  if (width < 1 || height < 1)
    throw FormatError("non-positive PGM dimensions", static_cast<long long>(pos));
  if (maxval < 1 || maxval > 65535)
    throw FormatError("PGM maxval " + std::to_string(maxval) + " out of range",
                      static_cast<long long>(pos));
  ++pos;  // single whitespace byte after maxval

  const int bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * bytes_per;
  if (buf.size() - pos < need)
    throw FormatError("PGM pixel data truncated", static_cast<long long>(buf.size()));

  Grid img(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      int v;
      if (bytes_per == 1) {
        v = static_cast<std::uint8_t>(buf[pos++]);
      } else {  // two-byte samples are big-endian
        v = (static_cast<std::uint8_t>(buf[pos]) << 8) | static_cast<std::uint8_t>(buf[pos + 1]);
        pos += 2;
      }
      img(r, c) = double(v) / maxval;
    }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Grid& gray) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << gray.cols() << ' ' << gray.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < gray.rows(); ++r)
    for (Eigen::Index c = 0; c < gray.cols(); ++c) out.put(static_cast<char>(quantize(gray(r, c))));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

void write_ppm(const std::filesystem::path& path, const Grid& r, const Grid& g, const Grid& b) {
  if (r.rows() != g.rows() || r.rows() != b.rows() || r.cols() != g.cols() || r.cols() != b.cols())
    throw ShapeError("write_ppm: channel dimensions differ");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << r.cols() << ' ' << r.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < r.rows(); ++y)
    for (Eigen::Index x = 0; x < r.cols(); ++x) {
      out.put(static_cast<char>(quantize(r(y, x))));
      out.put(static_cast<char>(quantize(g(y, x))));
      out.put(static_cast<char>(quantize(b(y, x))));
    }
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

}  // namespace gradfaith
