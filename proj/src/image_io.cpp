#include "geca/image_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "geca/errors.hpp"

namespace geca {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      tok.push_back(c);
      break;
    }
  }
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
  return tok;
}

}  // namespace

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptArtifact("cannot open image " + path.string());
  const std::string magic = header_token(in);
  Image8 img;
  if (magic == "P5") {
    img.channels = 1;
  } else if (magic == "P6") {
    img.channels = 3;
  } else {
    throw CorruptArtifact("unsupported image format in " + path.string());
  }
  try {
    img.width = std::stol(header_token(in));
    img.height = std::stol(header_token(in));
    if (std::stol(header_token(in)) != 255) throw CorruptArtifact("only 8-bit images are supported: " + path.string());
  } catch (const std::logic_error&) {
    throw CorruptArtifact("malformed image header in " + path.string());
  }
  if (img.width <= 0 || img.height <= 0) throw CorruptArtifact("bad image extents in " + path.string());
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw CorruptArtifact("truncated image data in " + path.string());
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw InputError("only 1- or 3-channel images can be written");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write image " + path.string());
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

Image8 to_image8(const TensorF& image) {
  if (image.rank() != 3) throw DimensionError("expected an [H x W x C] image");
  Image8 img{image.dim(0), image.dim(1), image.dim(2), {}};
  img.pixels.resize(static_cast<std::size_t>(image.size()));
  for (Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), -1.0, 1.0);
    img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
  }
  return img;
}

TensorF from_image8(const Image8& image) {
  TensorF out({image.height, image.width, image.channels});
  for (Index i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(image.pixels[static_cast<std::size_t>(i)]) / 127.5f - 1.0f;
  return out;
}

TensorF load_image(const std::filesystem::path& path) { return from_image8(read_pnm(path)); }

void save_image(const std::filesystem::path& path, const TensorF& image) { write_pnm(path, to_image8(image)); }

TensorF contact_sheet(const std::vector<TensorF>& images) {
  if (images.empty()) throw InputError("contact sheet needs at least one image");
  const Index h = images[0].dim(0), w = images[0].dim(1), c = images[0].dim(2);
  const auto n = static_cast<Index>(images.size());
  TensorF sheet = TensorF::constant({h + 2, n * (w + 1) + 1, c}, -1.0f);
  for (Index k = 0; k < n; ++k) {
    require_shape(images[static_cast<std::size_t>(k)].shape(), images[0].shape(), "contact sheet image");
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index ch = 0; ch < c; ++ch)
          sheet.at({i + 1, k * (w + 1) + 1 + j, ch}) = images[static_cast<std::size_t>(k)].at({i, j, ch});
  }
  return sheet;
}

double psnr(const TensorF& a, const TensorF& b) {
  require_shape(b.shape(), a.shape(), "psnr");
  const double mse = (a.array().cast<double>() - b.array().cast<double>()).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace geca
