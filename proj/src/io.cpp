#include "cgm/io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cgm/errors.hpp"

namespace cgm::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Byte helpers
// ---------------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) { bytes(v.data(), v.size() * sizeof(float)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, FormatErrorKind truncation, std::string what)
      : data_(data), truncation_(truncation), what_(std::move(what)) {}

  void bytes(void* dst, std::size_t n) {
    if (n > data_.size() - pos_) throw FormatError(truncation_, what_ + " is truncated");
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str(std::size_t limit = 1 << 16) {
    const auto n = u32();
    if (n > limit) throw FormatError(truncation_, what_ + " has an implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  FormatErrorKind truncation_;
  std::string what_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in slices.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// CGMB
// ---------------------------------------------------------------------------

std::vector<BlobEntry> blob_table(const WeightStore& weights) {
  std::vector<BlobEntry> table;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : weights) {  // std::map: lexicographic order
    table.push_back({name, t.shape(), offset});
    offset += t.size() * sizeof(float);
  }
  return table;
}

std::vector<std::uint8_t> encode_blob(const WeightStore& weights) {
  Writer w;
  w.bytes("CGMB", 4);
  w.u32(kBlobVersion);
  w.u32(static_cast<std::uint32_t>(weights.size()));
  const auto table = blob_table(weights);
  std::uint64_t payload = 0;
  for (const auto& e : table) {
    w.str(e.name);
    w.u8(0);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u64(e.offset);
    payload += shape_numel(e.shape) * sizeof(float);
  }
  w.u64(payload);
  for (const auto& [name, t] : weights) w.floats(t.data());
  w.u32(crc32_of(w.buffer()));
  return std::move(w.buffer());
}

WeightStore decode_blob(std::span<const std::uint8_t> bytes, std::vector<BlobEntry>* table_out) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CGMB", 4) != 0)
    throw FormatError(FormatErrorKind::Magic, "weight blob does not start with magic 'CGMB'");
  if (bytes.size() < 16) throw FormatError(FormatErrorKind::Checksum, "weight blob is truncated");
  // The checksum covers everything, so verify it before trusting any field.
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const auto body = bytes.first(bytes.size() - 4);
  Reader r(body, FormatErrorKind::Checksum, "weight blob");
  char magic[4];
  r.bytes(magic, 4);
  const auto version = r.u32();
  if (version != kBlobVersion)
    throw FormatError(FormatErrorKind::Version, "weight blob version " + std::to_string(version) +
                                                    " is not supported (expected " + std::to_string(kBlobVersion) + ")");
  if (crc32_of(body) != stored)
    throw FormatError(FormatErrorKind::Checksum, "weight blob CRC-32 mismatch (file corrupt or truncated)");

  const auto count = r.u32();
  std::vector<BlobEntry> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    BlobEntry e;
    e.name = r.str();
    if (r.u8() != 0) throw FormatError(FormatErrorKind::Shape, "weight '" + e.name + "' has an unsupported dtype");
    const auto ndim = r.u32();
    if (ndim == 0 || ndim > 8) throw FormatError(FormatErrorKind::Shape, "weight '" + e.name + "' has rank " + std::to_string(ndim));
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(r.u32());
    e.offset = r.u64();
    table.push_back(std::move(e));
  }
  const auto payload_bytes = r.u64();
  if (payload_bytes != r.remaining())
    throw FormatError(FormatErrorKind::Checksum, "weight blob payload length does not match its header");
  const std::size_t payload_start = r.pos();

  // Regions must be disjoint and inside the payload.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> regions;
  WeightStore weights;
  for (const auto& e : table) {
    const std::uint64_t n = shape_numel(e.shape) * sizeof(float);
    if (n == 0 || e.offset % sizeof(float) != 0 || e.offset > payload_bytes || n > payload_bytes - e.offset)
      throw FormatError(FormatErrorKind::Shape, "weight '" + e.name + "' points outside the payload");
    regions.emplace_back(e.offset, e.offset + n);
    std::vector<float> values(shape_numel(e.shape));
    std::memcpy(values.data(), body.data() + payload_start + e.offset, n);
    if (!weights.emplace(e.name, Tensor(e.shape, std::move(values))).second)
      throw FormatError(FormatErrorKind::Shape, "weight '" + e.name + "' appears twice");
  }
  std::sort(regions.begin(), regions.end());
  for (std::size_t i = 1; i < regions.size(); ++i)
    if (regions[i].first < regions[i - 1].second)
      throw FormatError(FormatErrorKind::Shape, "weight regions overlap in the blob payload");
  if (table_out) *table_out = std::move(table);
  return weights;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

json node_to_json(const NodeSpec& n) {
  json j;
  j["id"] = n.id;
  j["op"] = std::string(op_name(n.op));
  json parents = json::array();
  for (const auto& p : n.parents) parents.push_back(p.to_string());
  j["parents"] = parents;
  if (!n.weights.empty()) j["weights"] = n.weights;
  switch (n.op) {
    case OpKind::Linear: j["out_shape"] = n.out_shape; break;
    case OpKind::ConvTranspose2d:
      j["stride"] = n.conv.stride;
      j["pad"] = n.conv.pad;
      j["output_padding"] = n.conv.output_padding;
      break;
    case OpKind::BatchNorm: j["eps"] = n.eps; break;
    case OpKind::Activation: j["activation"] = std::string(kernels::activation_name(n.activation)); break;
    case OpKind::Add:
    case OpKind::Mask: break;
  }
  return j;
}

// Consecutive channels of one node collapse into "node:a-b" (or "node").
json layer_variables_json(const CgmGraph& g, const LayerSel& layer) {
  json vars = json::array();
  std::size_t i = 0;
  const auto& v = layer.variables;
  while (i < v.size()) {
    std::size_t j = i;
    while (j + 1 < v.size() && v[j + 1].node == v[i].node && v[j + 1].channel == v[j].channel + 1) ++j;
    const auto channels = g.node_shape(g.node_index(v[i].node))[1];
    if (v[i].channel == 0 && v[j].channel + 1 == channels)
      vars.push_back(v[i].node);
    else if (i == j)
      vars.push_back(v[i].node + ":" + std::to_string(v[i].channel));
    else
      vars.push_back(v[i].node + ":" + std::to_string(v[i].channel) + "-" + std::to_string(v[j].channel));
    i = j + 1;
  }
  return vars;
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(FormatErrorKind::Syntax, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorKind::Syntax, where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

std::string manifest_text(const CgmGraph& g, const std::string& blob_file, std::uint32_t blob_crc,
                          const std::string& provenance) {
  const auto& d = g.description();
  json m;
  m["format"] = "cgm-manifest";
  m["format_version"] = kManifestVersion;
  if (!provenance.empty()) m["provenance"] = provenance;
  json latent;
  latent["dim"] = d.latent.dim();
  latent["distribution"] = std::string(distribution_name(d.latent.distribution));
  json intervals = json::array();
  for (const auto& iv : d.latent.intervals) intervals.push_back({iv.lo, iv.hi});
  latent["intervals"] = intervals;
  m["latent"] = latent;
  json nodes = json::array();
  for (const auto& n : d.nodes) nodes.push_back(node_to_json(n));
  m["nodes"] = nodes;
  m["output"] = d.output;
  json layers = json::array();
  for (const auto& l : d.layers) layers.push_back({{"name", l.name}, {"variables", layer_variables_json(g, l)}});
  m["layers"] = layers;
  json weights = json::array();
  for (const auto& e : blob_table(g.weights()))
    weights.push_back({{"name", e.name}, {"dtype", "f32"}, {"shape", e.shape}, {"offset", e.offset}});
  m["weights"] = weights;
  m["blob"] = {{"file", blob_file}, {"crc32", blob_crc}};
  return m.dump(2) + "\n";
}

GraphDescription parse_manifest(const std::string& text, std::vector<BlobEntry>* table, std::string* blob_file) {
  json m;
  try {
    m = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatErrorKind::Syntax, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!m.is_object()) throw FormatError(FormatErrorKind::Syntax, "manifest must be a JSON object");
  const auto version = get<std::uint32_t>(m, "format_version", "manifest");
  if (version != kManifestVersion)
    throw FormatError(FormatErrorKind::Version, "manifest format_version " + std::to_string(version) +
                                                    " is not supported (expected " + std::to_string(kManifestVersion) +
                                                    ")");
  GraphDescription d;
  const auto& latent = m.at("latent");
  const auto dim = get<std::size_t>(latent, "dim", "latent");
  d.latent.distribution = parse_distribution(get<std::string>(latent, "distribution", "latent"));
  for (const auto& iv : get<std::vector<std::array<double, 2>>>(latent, "intervals", "latent"))
    d.latent.intervals.push_back({iv[0], iv[1]});
  if (d.latent.intervals.size() != dim)
    throw GraphError(GraphErrorKind::LatentMismatch, "latent dim " + std::to_string(dim) + " but " +
                                                         std::to_string(d.latent.intervals.size()) +
                                                         " intervals declared");
  for (const auto& jn : get<json>(m, "nodes", "manifest")) {
    NodeSpec n;
    n.id = get<std::string>(jn, "id", "node");
    const std::string where = "node '" + n.id + "'";
    n.op = parse_op(get<std::string>(jn, "op", where));
    for (const auto& p : get<std::vector<std::string>>(jn, "parents", where)) n.parents.push_back(ParentRef::parse(p));
    if (jn.contains("weights")) n.weights = get<std::map<std::string, std::string>>(jn, "weights", where);
    switch (n.op) {
      case OpKind::Linear: n.out_shape = get<Shape>(jn, "out_shape", where); break;
      case OpKind::ConvTranspose2d:
        n.conv.stride = get<std::size_t>(jn, "stride", where);
        n.conv.pad = get<std::size_t>(jn, "pad", where);
        n.conv.output_padding = jn.value("output_padding", std::size_t{0});
        break;
      case OpKind::BatchNorm: n.eps = get<float>(jn, "eps", where); break;
      case OpKind::Activation: n.activation = kernels::parse_activation(get<std::string>(jn, "activation", where)); break;
      case OpKind::Add:
      case OpKind::Mask: break;
    }
    d.nodes.push_back(std::move(n));
  }
  d.output = get<std::string>(m, "output", "manifest");
  if (m.contains("layers"))
    for (const auto& jl : m.at("layers")) {
      LayerSel l;
      l.name = get<std::string>(jl, "name", "layer");
      // Resolved to variables after the graph is known; keep raw specs here.
      for (const auto& v : get<std::vector<std::string>>(jl, "variables", "layer '" + l.name + "'")) {
        Variable var;
        var.node = v;
        var.channel = SIZE_MAX;  // marker: unresolved spec
        l.variables.push_back(var);
      }
      d.layers.push_back(std::move(l));
    }
  if (table) {
    table->clear();
    for (const auto& jw : get<json>(m, "weights", "manifest")) {
      BlobEntry e;
      e.name = get<std::string>(jw, "name", "weight");
      e.shape = get<Shape>(jw, "shape", "weight '" + e.name + "'");
      e.offset = get<std::uint64_t>(jw, "offset", "weight '" + e.name + "'");
      table->push_back(std::move(e));
    }
  }
  if (blob_file) *blob_file = m.contains("blob") ? m.at("blob").value("file", std::string{}) : std::string{};
  return d;
}

namespace {

// Builds the graph, then resolves layer variable specs against it.
CgmGraph build_with_layers(GraphDescription d, WeightStore weights) {
  std::vector<std::pair<std::string, std::vector<std::string>>> raw;
  for (auto& l : d.layers) {
    std::vector<std::string> specs;
    for (const auto& v : l.variables) specs.push_back(v.node);
    raw.emplace_back(l.name, std::move(specs));
  }
  d.layers.clear();
  const auto plain = CgmGraph::build(d, weights);
  for (const auto& [name, specs] : raw) d.layers.push_back({name, plain.parse_variables(specs)});
  return CgmGraph::build(std::move(d), std::move(weights));
}

}  // namespace

void save_model(const CgmGraph& g, const fs::path& manifest, const fs::path& blob, const std::string& provenance) {
  if (g.is_intervened()) throw ValidationError("an intervened graph cannot be saved as a model");
  const auto bytes = encode_blob(g.weights());
  std::uint32_t crc;
  std::memcpy(&crc, bytes.data() + bytes.size() - 4, 4);
  write_file(blob, bytes);
  // Relative reference when the blob sits next to the manifest.
  std::string ref = blob.string();
  if (fs::absolute(blob).parent_path() == fs::absolute(manifest).parent_path()) ref = blob.filename().string();
  write_text(manifest, manifest_text(g, ref, crc, provenance));
}

CgmGraph load_model(const fs::path& manifest, const fs::path& blob) {
  const auto text_bytes = read_file(manifest);
  std::vector<BlobEntry> declared;
  std::string blob_ref;
  auto desc = parse_manifest(std::string(text_bytes.begin(), text_bytes.end()), &declared, &blob_ref);
  fs::path blob_path = blob;
  if (blob_path.empty()) {
    if (blob_ref.empty()) throw FormatError(FormatErrorKind::Resolution, "manifest does not name a weight blob");
    blob_path = fs::path(blob_ref).is_absolute() ? fs::path(blob_ref) : manifest.parent_path() / blob_ref;
  }
  std::vector<BlobEntry> stored;
  auto weights = decode_blob(read_file(blob_path), &stored);

  std::map<std::string, const BlobEntry*> by_name;
  for (const auto& e : stored) by_name[e.name] = &e;
  for (const auto& e : declared) {
    auto it = by_name.find(e.name);
    if (it == by_name.end())
      throw FormatError(FormatErrorKind::Resolution, "weight '" + e.name + "' declared in the manifest is missing from the blob");
    if (it->second->shape != e.shape || it->second->offset != e.offset)
      throw FormatError(FormatErrorKind::Shape, "weight '" + e.name + "': manifest declares " + shape_to_string(e.shape) +
                                                    " at offset " + std::to_string(e.offset) + ", blob has " +
                                                    shape_to_string(it->second->shape) + " at offset " +
                                                    std::to_string(it->second->offset));
  }
  if (declared.size() != stored.size())
    throw FormatError(FormatErrorKind::Shape, "manifest declares " + std::to_string(declared.size()) +
                                                  " weights but the blob holds " + std::to_string(stored.size()));
  return build_with_layers(std::move(desc), std::move(weights));
}

// ---------------------------------------------------------------------------
// EIMS
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_eims(const EimStack& s) {
  Writer w;
  w.bytes("EIMS", 4);
  w.u32(kEimsVersion);
  w.str(s.layer);
  w.u32(static_cast<std::uint32_t>(s.rows()));
  w.u32(static_cast<std::uint32_t>(s.height()));
  w.u32(static_cast<std::uint32_t>(s.width()));
  w.u64(s.seed);
  w.u32(static_cast<std::uint32_t>(s.n_pairs));
  w.floats(s.maps.data());
  return std::move(w.buffer());
}

EimStack decode_eims(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "EIMS", 4) != 0)
    throw FormatError(FormatErrorKind::Magic, "map file does not start with magic 'EIMS'");
  Reader r(bytes, FormatErrorKind::Shape, "map file");
  char magic[4];
  r.bytes(magic, 4);
  const auto version = r.u32();
  if (version != kEimsVersion)
    throw FormatError(FormatErrorKind::Version, "map file version " + std::to_string(version) + " is not supported");
  EimStack s;
  s.layer = r.str();
  const std::size_t c = r.u32(), h = r.u32(), w = r.u32();
  s.seed = r.u64();
  s.n_pairs = r.u32();
  if (c == 0 || h == 0 || w == 0) throw FormatError(FormatErrorKind::Shape, "map file has an empty dimension");
  if (r.remaining() != c * h * w * sizeof(float))
    throw FormatError(FormatErrorKind::Shape, "map file payload does not match C*H*W");
  std::vector<float> values(c * h * w);
  r.bytes(values.data(), values.size() * sizeof(float));
  s.maps = Tensor({c, h, w}, std::move(values));
  return s;
}

void write_eims(const fs::path& path, const EimStack& stack) { write_file(path, encode_eims(stack)); }
EimStack read_eims(const fs::path& path) { return decode_eims(read_file(path)); }

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

struct PngWriteState {
  std::vector<std::uint8_t>* out;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<PngWriteState*>(png_get_io_ptr(png));
  st->out->insert(st->out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

[[noreturn]] void png_error_cb(png_structp, png_const_charp msg) { throw IoError(std::string("libpng: ") + msg); }
void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace

PngScale write_png(const fs::path& path, const Tensor& image, const std::string& provenance) {
  std::size_t c = 1, h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    c = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw DimensionError("PNG output needs [H,W], [1,H,W] or [3,H,W], got " + shape_to_string(image.shape()));
  }
  PngScale scale;
  scale.min = *std::min_element(image.data().begin(), image.data().end());
  scale.max = *std::max_element(image.data().begin(), image.data().end());
  const float range = scale.max - scale.min;

  std::vector<std::uint8_t> pixels(h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = image[(ch * h + y) * w + x];
        const float t = range > 0.0f ? (v - scale.min) / range : 0.0f;
        pixels[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0f, 1.0f) * 255.0f));
      }

  std::vector<std::uint8_t> bytes;
  PngWriteState state{&bytes};
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &state, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    std::string scale_text = "min=" + format_number(scale.min) + ",max=" + format_number(scale.max);
    std::vector<png_text> texts;
    png_text t1{};
    t1.compression = PNG_TEXT_COMPRESSION_NONE;
    t1.key = const_cast<char*>("scale");
    t1.text = scale_text.data();
    texts.push_back(t1);
    if (!provenance.empty()) {
      png_text t2{};
      t2.compression = PNG_TEXT_COMPRESSION_NONE;
      t2.key = const_cast<char*>("provenance");
      t2.text = const_cast<char*>(provenance.c_str());
      texts.push_back(t2);
    }
    png_set_text(png, info, texts.data(), static_cast<int>(texts.size()));
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w * c);
    png_write_end(png, info);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  write_file(path, bytes);
  return scale;
}

namespace {
struct PngReadState {
  const std::vector<std::uint8_t>* data;
  std::size_t pos = 0;
};
void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->data->size()) throw IoError("PNG file is truncated");
  std::memcpy(out, st->data->data() + st->pos, len);
  st->pos += len;
}
}  // namespace

PngImage read_png(const fs::path& path) {
  const auto bytes = read_file(path);
  PngReadState state{&bytes};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  if (!png) throw IoError("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  PngImage img;
  try {
    png_set_read_fn(png, &state, png_read_cb);
    png_read_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.pixels.resize(img.width * img.height * img.channels);
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * img.channels, nullptr);
    png_read_end(png, info);
    png_textp text = nullptr;
    int n = 0;
    png_get_text(png, info, &text, &n);
    for (int i = 0; i < n; ++i) img.text.emplace_back(text[i].key, text[i].text);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Tensor squeeze_batch(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1) throw DimensionError("expected [1,C,H,W], got " + shape_to_string(t.shape()));
  return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
}

Tensor montage(const std::vector<std::vector<Tensor>>& grid, std::size_t gap) {
  if (grid.empty() || grid.front().empty()) throw DimensionError("montage needs at least one tile");
  const Shape tile = grid.front().front().shape();
  if (tile.size() != 3) throw DimensionError("montage tiles must be [C,H,W]");
  std::size_t cols = 0;
  float lo = std::numeric_limits<float>::infinity();
  for (const auto& row : grid) {
    cols = std::max(cols, row.size());
    for (const auto& t : row) {
      if (t.shape() != tile) throw DimensionError("montage tiles must share one shape");
      lo = std::min(lo, *std::min_element(t.data().begin(), t.data().end()));
    }
  }
  const std::size_t c = tile[0], th = tile[1], tw = tile[2], rows = grid.size();
  const std::size_t h = rows * th + (rows - 1) * gap, w = cols * tw + (cols - 1) * gap;
  Tensor out({c, h, w}, lo);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < grid[r].size(); ++q) {
      const Tensor& t = grid[r][q];
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < th; ++y)
          for (std::size_t x = 0; x < tw; ++x)
            out[(ch * h + r * (th + gap) + y) * w + q * (tw + gap) + x] = t[(ch * th + y) * tw + x];
    }
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw FormatError(FormatErrorKind::Syntax, "CSV has no column '" + std::string(name) + "'");
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

void write_csv(const fs::path& path, const CsvTable& table) {
  std::ostringstream os;
  if (!table.provenance.empty()) os << "# " << table.provenance << '\n';
  for (std::size_t i = 0; i < table.header.size(); ++i) os << (i ? "," : "") << csv_field(table.header[i]);
  os << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) throw DimensionError("CSV row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_field(row[i]);
    os << '\n';
  }
  write_text(path, os.str());
}

CsvTable read_csv(const fs::path& path) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (!have_header && t.provenance.empty()) t.provenance = line.size() > 2 ? line.substr(2) : "";
      continue;
    }
    auto fields = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != t.header.size())
        throw FormatError(FormatErrorKind::Syntax, "CSV row has " + std::to_string(fields.size()) + " fields, header has " +
                                                       std::to_string(t.header.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  if (!have_header) throw FormatError(FormatErrorKind::Syntax, "CSV file '" + path.string() + "' has no header");
  return t;
}

}  // namespace cgm::io
