#include "usnas/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "usnas/common.hpp"

namespace usnas {

namespace {

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* file = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (file) std::fclose(file);
  }
};

RoiImage read_png_file(const std::filesystem::path& path, bool convert) {
  PngReadCloser ctx;
  ctx.file = std::fopen(path.c_str(), "rb");
  if (!ctx.file) throw IoError("cannot open " + path.string());
  unsigned char header[8];
  if (std::fread(header, 1, 8, ctx.file) != 8 ||
      png_sig_cmp(header, 0, 8) != 0)
    throw IoError(path.string() + " is not a PNG file");
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                   nullptr);
  if (!ctx.png) throw IoError("libpng init failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw IoError("libpng init failed");
  if (setjmp(png_jmpbuf(ctx.png)))
    throw IoError("failed to decode " + path.string());
  png_init_io(ctx.png, ctx.file);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  const png_byte color_type = png_get_color_type(ctx.png, ctx.info);
  const png_byte bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  const bool gray = color_type == PNG_COLOR_TYPE_GRAY;
  if ((!gray || bit_depth > 8) && !convert)
    throw ValidationError(path.string() +
                          " is not 8-bit grayscale (enable conversion to "
                          "accept color or 16-bit input)");
  if (bit_depth == 16) png_set_strip_16(ctx.png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (gray && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS))
    png_set_tRNS_to_alpha(ctx.png);
  if (color_type & PNG_COLOR_MASK_ALPHA ||
      png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS))
    png_set_strip_alpha(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  const png_byte channels = png_get_channels(ctx.png, ctx.info);
  if (channels != 1 && channels != 3)
    throw IoError(path.string() + " has unsupported channel layout");

  std::vector<uint8_t> raw(static_cast<size_t>(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r)
    rows[r] = raw.data() + static_cast<size_t>(r) * w * channels;
  png_read_image(ctx.png, rows.data());

  RoiImage img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w);
  img.pixels.resize(static_cast<size_t>(h) * w);
  if (channels == 1) {
    img.pixels = std::move(raw);
  } else {
    for (size_t i = 0; i < img.pixels.size(); ++i) {
      const double lum = 0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] +
                         0.114 * raw[3 * i + 2];
      img.pixels[i] = static_cast<uint8_t>(std::lround(lum));
    }
  }
  return img;
}

RoiImage read_pgm_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  auto next_token = [&f, &path]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
    throw IoError(path.string() + ": truncated PGM header");
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P2")
    throw IoError(path.string() + " is not a PGM file");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w < 1 || h < 1) throw IoError(path.string() + ": bad PGM dimensions");
  if (maxval != 255)
    throw ValidationError(path.string() + " is not 8-bit (maxval " +
                          std::to_string(maxval) + ")");
  RoiImage img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<size_t>(h) * w);
  if (magic == "P5") {
    f.get();  // single whitespace after maxval
    f.read(reinterpret_cast<char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw IoError(path.string() + ": truncated PGM data");
  } else {
    for (auto& px : img.pixels) {
      int v;
      if (!(f >> v)) throw IoError(path.string() + ": truncated PGM data");
      px = static_cast<uint8_t>(std::clamp(v, 0, 255));
    }
  }
  return img;
}

}  // namespace

RoiImage read_image(const std::filesystem::path& path, bool convert_to_gray) {
  const std::string ext = path.extension().string();
  RoiImage img;
  if (ext == ".png" || ext == ".PNG") {
    img = read_png_file(path, convert_to_gray);
  } else if (ext == ".pgm" || ext == ".PGM") {
    img = read_pgm_file(path);
  } else {
    throw IoError("unsupported image format: " + path.string());
  }
  if (img.height < 2 || img.width < 2)
    throw ValidationError(path.string() + " is smaller than 2x2 pixels");
  return img;
}

void write_png(const std::filesystem::path& path, const RoiImage& img) {
  FILE* file = std::fopen(path.c_str(), "wb");
  if (!file) throw IoError("cannot write " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(file);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(file);
    throw IoError("failed to encode " + path.string());
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int r = 0; r < img.height; ++r)
    rows[static_cast<size_t>(r)] = const_cast<png_bytep>(
        img.pixels.data() + static_cast<size_t>(r) * img.width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(file);
}

void write_pgm(const std::filesystem::path& path, const RoiImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
}

std::vector<RoiImage> load_dataset(const std::filesystem::path& root,
                                   bool convert_to_gray) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw IoError("dataset root " + root.string() + " is not a directory");

  std::vector<RoiImage> out;
  for (const auto& [dir, label] :
       {std::pair{std::string("benign"), Label::kBenign},
        std::pair{std::string("malignant"), Label::kMalignant}}) {
    const fs::path class_dir = root / dir;
    if (!fs::is_directory(class_dir))
      throw IoError("dataset is missing the " + dir + "/ directory under " +
                    root.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string ext = entry.path().extension().string();
      if (ext == ".png" || ext == ".PNG" || ext == ".pgm" || ext == ".PGM")
        files.push_back(entry.path());
    }
    if (files.empty())
      throw ValidationError("class " + dir + " has no images");
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
      RoiImage img = read_image(p, convert_to_gray);
      img.label = label;
      img.source_id = dir + "/" + p.filename().string();
      img.provenance = Provenance::kOriginal;
      out.push_back(std::move(img));
    }
  }
  return out;
}

std::string manifest_csv(const std::vector<ManifestRow>& rows) {
  std::ostringstream out;
  out << "source_id,provenance,label,fold,file_path\n";
  for (const ManifestRow& r : rows) {
    out << r.source_id << "," << provenance_name(r.provenance) << ","
        << label_name(r.label) << "," << r.fold << "," << r.file_path << "\n";
  }
  return out.str();
}

std::string augmented_file_name(const RoiImage& img) {
  std::string stem = img.source_id;
  for (char& c : stem) {
    if (c == '/' || c == '\\') c = '_';
    if (c == '.') c = '_';
  }
  return stem + "__" + std::string(provenance_name(img.provenance)) + ".png";
}

AugmentedSet load_augmented_set(const std::filesystem::path& dir) {
  const std::filesystem::path manifest = dir / "manifest.csv";
  std::ifstream f(manifest);
  if (!f) throw IoError("cannot open " + manifest.string());
  std::string line;
  if (!std::getline(f, line) ||
      line != "source_id,provenance,label,fold,file_path")
    throw IoError(manifest.string() + " has a bad header");

  AugmentedSet out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream row(line);
    std::string col;
    while (std::getline(row, col, ',')) cols.push_back(col);
    if (cols.size() != 5)
      throw IoError(manifest.string() + ": bad row: " + line);
    RoiImage img = read_image(dir / cols[4], false);
    img.source_id = cols[0];
    bool found = false;
    for (int p = 0; p < 8; ++p) {
      if (provenance_name(static_cast<Provenance>(p)) == cols[1]) {
        img.provenance = static_cast<Provenance>(p);
        found = true;
        break;
      }
    }
    if (!found)
      throw IoError(manifest.string() + ": unknown provenance " + cols[1]);
    if (cols[2] == "benign") {
      img.label = Label::kBenign;
    } else if (cols[2] == "malignant") {
      img.label = Label::kMalignant;
    } else {
      throw IoError(manifest.string() + ": unknown label " + cols[2]);
    }
    const int fold = std::stoi(cols[3]);
    if (fold >= 0) out.fold_of[img.source_id] = fold;
    out.images.push_back(std::move(img));
  }
  if (out.images.empty()) throw IoError(manifest.string() + " lists no images");
  return out;
}

uint64_t dataset_fingerprint(const std::vector<RoiImage>& images) {
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const uint8_t* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= data[i];
      h *= 1099511628211ULL;
    }
  };
  for (const RoiImage& img : images) {
    mix(reinterpret_cast<const uint8_t*>(img.source_id.data()),
        img.source_id.size());
    const uint8_t meta[2] = {static_cast<uint8_t>(img.label),
                             static_cast<uint8_t>(img.provenance)};
    mix(meta, 2);
    mix(img.pixels.data(), img.pixels.size());
  }
  return h;
}

}  // namespace usnas
