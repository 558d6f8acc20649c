#include "ews/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "ews/hashing.hpp"

namespace ews {

namespace fs = std::filesystem;

Tensor Dataset::gather(const std::vector<int>& indices) const {
  Tensor out({static_cast<int>(indices.size()), channels, height, width});
  const std::size_t sz = image_scalars();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int id = indices[i];
    if (id < 0 || id >= size())
      throw std::out_of_range("dataset index out of range");
    std::memcpy(out.data() + i * sz, image(id), sz * sizeof(float));
  }
  return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<int>& indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    out[i] = labels.at(static_cast<std::size_t>(indices[i]));
  return out;
}

std::uint64_t Dataset::content_hash() const {
  const int dims[4] = {height, width, channels, num_classes};
  std::uint64_t h = fnv1a64(dims, sizeof(dims));
  h = fnv1a64(images.data(), images.size() * sizeof(float), h);
  h = fnv1a64(labels.data(), labels.size() * sizeof(int), h);
  return h;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.n < 1 || spec.classes < 2 || spec.hw < 2 || spec.channels < 1 ||
      spec.grid < 1)
    throw std::invalid_argument("bad synthetic dataset spec");
  Dataset ds;
  ds.height = spec.hw;
  ds.width = spec.hw;
  ds.channels = spec.channels;
  ds.num_classes = spec.classes;
  const std::size_t sz = ds.image_scalars();

  // class prototypes: coarse grids upsampled bilinearly
  Rng proto_rng(spec.seed, "synthetic-prototypes", 0);
  const int g = spec.grid;
  std::vector<float> protos(static_cast<std::size_t>(spec.classes) * sz);
  std::vector<double> grid(static_cast<std::size_t>(spec.channels) *
                           static_cast<std::size_t>(g) *
                           static_cast<std::size_t>(g));
  for (int k = 0; k < spec.classes; ++k) {
    for (double& v : grid) v = proto_rng.uniform(0.15, 0.85);
    float* img = protos.data() + static_cast<std::size_t>(k) * sz;
    for (int c = 0; c < spec.channels; ++c)
      for (int y = 0; y < spec.hw; ++y)
        for (int x = 0; x < spec.hw; ++x) {
          // bilinear sample of the g x g grid at cell centers
          const double gy = (y + 0.5) / spec.hw * g - 0.5;
          const double gx = (x + 0.5) / spec.hw * g - 0.5;
          const int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, g - 1);
          const int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, g - 1);
          const int y1 = std::min(y0 + 1, g - 1);
          const int x1 = std::min(x0 + 1, g - 1);
          const double fy = std::clamp(gy - y0, 0.0, 1.0);
          const double fx = std::clamp(gx - x0, 0.0, 1.0);
          auto cell = [&](int yy, int xx) {
            return grid[(static_cast<std::size_t>(c) * g + yy) * g + xx];
          };
          const double v = (1 - fy) * ((1 - fx) * cell(y0, x0) +
                                       fx * cell(y0, x1)) +
                           fy * ((1 - fx) * cell(y1, x0) + fx * cell(y1, x1));
          img[(static_cast<std::size_t>(c) * spec.hw + y) * spec.hw + x] =
              static_cast<float>(v);
        }
  }

  ds.images.resize(static_cast<std::size_t>(spec.n) * sz);
  ds.labels.resize(static_cast<std::size_t>(spec.n));
  Rng label_rng(spec.seed, "synthetic-labels", 0);
  for (int i = 0; i < spec.n; ++i) {
    const int k = i < spec.classes ? i  // guarantee every class occurs
                                   : label_rng.uniform_int(spec.classes);
    ds.labels[static_cast<std::size_t>(i)] = k;
    Rng noise_rng(spec.seed, "synthetic-noise",
                  static_cast<std::uint64_t>(i));
    const float* proto = protos.data() + static_cast<std::size_t>(k) * sz;
    float* img = ds.images.data() + static_cast<std::size_t>(i) * sz;
    for (std::size_t j = 0; j < sz; ++j) {
      const double v = proto[j] + spec.noise * noise_rng.normal();
      img[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return ds;
}

void write_packed_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  const char magic[8] = {'E', 'W', 'S', 'D', 'A', 'T', 'A', '1'};
  os.write(magic, sizeof(magic));
  const std::int32_t dims[5] = {ds.height, ds.width, ds.channels,
                                ds.num_classes, ds.size()};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(ds.labels.data()),
           static_cast<std::streamsize>(ds.labels.size() * sizeof(int)));
  os.write(reinterpret_cast<const char*>(ds.images.data()),
           static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  if (!os) throw std::runtime_error("short write to " + path);
}

Dataset read_packed_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, "EWSDATA1", 8) != 0)
    throw std::runtime_error(path + " is not a packed dataset");
  std::int32_t dims[5];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  Dataset ds;
  ds.height = dims[0];
  ds.width = dims[1];
  ds.channels = dims[2];
  ds.num_classes = dims[3];
  const int n = dims[4];
  if (n < 0 || ds.height < 1 || ds.width < 1 || ds.channels < 1)
    throw std::runtime_error(path + ": corrupt dataset header");
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.images.resize(static_cast<std::size_t>(n) * ds.image_scalars());
  is.read(reinterpret_cast<char*>(ds.labels.data()),
          static_cast<std::streamsize>(ds.labels.size() * sizeof(int)));
  is.read(reinterpret_cast<char*>(ds.images.data()),
          static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  if (!is) throw std::runtime_error(path + ": truncated dataset");
  return ds;
}

namespace {

void read_ppm(const std::string& path, int& w, int& h,
              std::vector<unsigned char>& rgb) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string tag;
  is >> tag;
  if (tag != "P6") throw std::runtime_error(path + ": not a P6 ppm");
  auto next_int = [&](int& out) {
    // skip whitespace and '#' comment lines
    int c;
    while ((c = is.peek()) != EOF) {
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    if (!(is >> out)) throw std::runtime_error(path + ": bad ppm header");
  };
  int maxval = 0;
  next_int(w);
  next_int(h);
  next_int(maxval);
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error(path + ": unsupported ppm dimensions");
  is.get();  // single whitespace before payload
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(rgb.data()),
          static_cast<std::streamsize>(rgb.size()));
  if (!is) throw std::runtime_error(path + ": truncated ppm payload");
}

}  // namespace

Dataset ingest_class_folders(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error(dir + " is not a directory");
  std::vector<std::string> classes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2)
    throw std::runtime_error(dir + ": need at least two class folders");

  Dataset ds;
  ds.channels = 3;
  ds.num_classes = static_cast<int>(classes.size());
  bool first = true;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / classes[k]))
      if (e.is_regular_file() && e.path().extension() == ".ppm")
        files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error("class folder '" + classes[k] +
                               "' has no ppm images");
    for (const std::string& f : files) {
      int w = 0, h = 0;
      std::vector<unsigned char> rgb;
      read_ppm(f, w, h, rgb);
      if (first) {
        ds.width = w;
        ds.height = h;
        first = false;
      } else if (w != ds.width || h != ds.height) {
        throw std::runtime_error(f + ": size differs from the rest of the set");
      }
      const std::size_t base = ds.images.size();
      ds.images.resize(base + ds.image_scalars());
      float* img = ds.images.data() + base;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            img[(static_cast<std::size_t>(c) * h + y) * w + x] =
                rgb[(static_cast<std::size_t>(y) * w + x) * 3 +
                    static_cast<std::size_t>(c)] /
                255.0f;
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

SplitIndices split_indices(int n, double val_fraction, Rng& rng) {
  if (n < 1 || val_fraction < 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("bad split request");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  const int n_val = static_cast<int>(std::nearbyint(val_fraction * n));
  SplitIndices out;
  out.val.assign(order.begin(), order.begin() + n_val);
  out.train.assign(order.begin() + n_val, order.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  return h;
}

}  // namespace ews
