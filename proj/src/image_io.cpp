#include "litsearch/image_io.hpp"

#include "litsearch/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace litsearch {

Rgb8Image to_rgb8(const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3)
    throw ShapeError("to_rgb8 expects [3, H, W], got " + to_string(pixels.shape()));
  Rgb8Image img;
  img.height = pixels.dim(1);
  img.width = pixels.dim(2);
  img.data.resize(std::size_t(3 * img.width * img.height));
  const Index plane = img.width * img.height;
  for (Index c = 0; c < 3; ++c)
    for (Index p = 0; p < plane; ++p) {
      const double v = std::clamp(pixels[c * plane + p], 0.0, 1.0);
      img.data[std::size_t(p * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

Rgb8Image compose_grid(const std::vector<std::vector<Tensor>>& rows, Index gutter) {
  if (rows.empty() || rows.front().empty()) throw ShapeError("compose_grid: no tiles");
  if (gutter < 0) throw ShapeError("compose_grid: negative gutter");
  const Index n_rows = Index(rows.size()), n_cols = Index(rows.front().size());
  const Shape tile = rows.front().front().shape();
  for (const auto& row : rows) {
    if (Index(row.size()) != n_cols) throw ShapeError("compose_grid: ragged rows");
    for (const Tensor& t : row)
      if (t.shape() != tile)
        throw ShapeError("compose_grid: tile " + to_string(t.shape()) + " differs from " + to_string(tile));
  }
  const Index th = tile.at(1), tw = tile.at(2);
  Rgb8Image out;
  out.width = n_cols * tw + (n_cols - 1) * gutter;
  out.height = n_rows * th + (n_rows - 1) * gutter;
  out.data.assign(std::size_t(3 * out.width * out.height), 255);
  for (Index r = 0; r < n_rows; ++r)
    for (Index c = 0; c < n_cols; ++c) {
      const Rgb8Image t = to_rgb8(rows[std::size_t(r)][std::size_t(c)]);
      const Index x0 = c * (tw + gutter), y0 = r * (th + gutter);
      for (Index y = 0; y < th; ++y)
        std::copy_n(t.data.begin() + std::ptrdiff_t(y * tw * 3), tw * 3,
                    out.data.begin() + std::ptrdiff_t(((y0 + y) * out.width + x0) * 3));
    }
  return out;
}

std::string encode_ppm(const Rgb8Image& img) {
  if (img.data.size() != std::size_t(3 * img.width * img.height)) throw ShapeError("encode_ppm: buffer size mismatch");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.data.begin(), img.data.end());
  return out;
}

Rgb8Image decode_ppm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  Rgb8Image img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (!in || magic != "P6" || maxval != 255 || img.width <= 0 || img.height <= 0)
    throw Error("decode_ppm: unsupported header (expected P6, maxval 255)");
  in.get();  // single whitespace after maxval
  const std::size_t n = std::size_t(3 * img.width * img.height);
  const std::size_t offset = std::size_t(in.tellg());
  if (bytes.size() - offset != n) throw Error("decode_ppm: pixel data has wrong length");
  img.data.assign(bytes.begin() + std::ptrdiff_t(offset), bytes.end());
  return img;
}

void write_ppm(const std::filesystem::path& path, const Rgb8Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << encode_ppm(img);
  if (!out) throw Error("write failed for " + path.string());
}

Rgb8Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_ppm(ss.str());
}

}  // namespace litsearch
