// SPDX-License-Identifier: Apache-2.0
#include "d2quant/artifact_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "artifact payloads are little-endian; big-endian hosts are unsupported");

namespace d2quant {

using nlohmann::json;

namespace {

constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

struct PayloadWriter {
  std::vector<std::uint8_t> bytes;

  std::size_t append(const void* data, std::size_t len) {
    const std::size_t offset = align_up(bytes.size());
    bytes.resize(offset, 0);
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + len);
    return offset;
  }
};

json tensor_entry(const char* dtype, std::initializer_list<std::size_t> shape,
                  std::size_t offset, std::size_t length) {
  json e;
  e["dtype"] = dtype;
  e["shape"] = std::vector<std::size_t>(shape);
  e["offset"] = offset;
  e["length"] = length;
  return e;
}

void put_vector(json& dir, PayloadWriter& w, const std::string& name,
                const std::vector<float>& v) {
  const std::size_t len = v.size() * sizeof(float);
  const std::size_t off = w.append(v.data(), len);
  dir[name] = tensor_entry("f32", {v.size()}, off, len);
}

void put_matrix(json& dir, PayloadWriter& w, const std::string& name, const Matrix& m) {
  const std::size_t len = m.size() * sizeof(float);
  const std::size_t off = w.append(m.data().data(), len);
  dir[name] = tensor_entry("f32", {m.rows(), m.cols()}, off, len);
}

void put_slot(json& dir, PayloadWriter& w, const std::string& name,
              const WeightSlot& slot) {
  if (const auto* m = std::get_if<Matrix>(&slot)) {
    put_matrix(dir, w, name, *m);
    return;
  }
  const auto& q = std::get<QuantizedTensor>(slot);
  const std::size_t code_len = q.codes.data.size();
  const std::size_t code_off = w.append(q.codes.data.data(), code_len);
  json codes = tensor_entry("u8", {q.rows(), q.cols()}, code_off, code_len);
  codes["bits"] = q.bits;
  codes["group_size"] = q.group_size;
  dir[name + ".codes"] = std::move(codes);

  put_matrix(dir, w, name + ".scales", q.scales);

  const std::size_t zp_len = q.zero_points.data.size();
  const std::size_t zp_off = w.append(q.zero_points.data.data(), zp_len);
  dir[name + ".zero_points"] =
      tensor_entry("u8", {q.zero_points.rows, q.zero_points.cols}, zp_off, zp_len);
}

std::string block_prefix(std::size_t l) { return "blocks." + std::to_string(l) + "."; }

// ---- reading -------------------------------------------------------------

struct PayloadReader {
  const std::vector<std::uint8_t>& bytes;

  void check_range(const std::string& name, std::size_t offset, std::size_t length) const {
    if (offset % kAlign != 0)
      throw ArtifactBoundsError("tensor '" + name + "': offset not 64-byte aligned");
    if (offset > bytes.size() || length > bytes.size() - offset)
      throw ArtifactBoundsError("tensor '" + name + "': offset " +
                                std::to_string(offset) + " + length " +
                                std::to_string(length) + " exceeds payload of " +
                                std::to_string(bytes.size()) + " bytes");
  }
};

struct Entry {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t length = 0;
  int bits = 0;
  std::uint32_t group_size = 0;
};

Entry parse_entry(const std::string& name, const json& j) {
  Entry e;
  try {
    e.dtype = j.at("dtype").get<std::string>();
    e.shape = j.at("shape").get<std::vector<std::size_t>>();
    e.offset = j.at("offset").get<std::size_t>();
    e.length = j.at("length").get<std::size_t>();
    e.bits = j.value("bits", 0);
    e.group_size = j.value("group_size", 0u);
  } catch (const json::exception& ex) {
    throw ArtifactBoundsError("tensor '" + name + "': malformed manifest entry (" +
                              ex.what() + ")");
  }
  std::size_t elems = 1;
  for (std::size_t d : e.shape) elems *= d;
  const std::size_t elem_size = e.dtype == "f32" ? 4 : e.dtype == "u8" ? 1 : 0;
  if (elem_size == 0)
    throw ArtifactBoundsError("tensor '" + name + "': unknown dtype '" + e.dtype + "'");
  if (e.shape.empty() || elems == 0 || elems * elem_size != e.length)
    throw ArtifactBoundsError("tensor '" + name + "': shape does not match length");
  return e;
}

class ArtifactFile {
 public:
  ArtifactFile(json manifest, std::vector<std::uint8_t> payload)
      : manifest_(std::move(manifest)), payload_(std::move(payload)) {}

  const json& config() const { return manifest_.at("config"); }
  bool has(const std::string& name) const { return manifest_.at("tensors").contains(name); }

  std::vector<float> read_f32(const std::string& name,
                              const std::vector<std::size_t>& want_shape) const {
    const Entry e = entry(name, "f32", want_shape);
    std::vector<float> out(e.length / sizeof(float));
    std::memcpy(out.data(), payload_.data() + e.offset, e.length);
    for (float v : out)
      if (!std::isfinite(v))
        throw ArtifactValueError("tensor '" + name + "': non-finite value");
    return out;
  }

  std::vector<std::uint8_t> read_u8(const std::string& name,
                                    const std::vector<std::size_t>& want_shape) const {
    const Entry e = entry(name, "u8", want_shape);
    return {payload_.begin() + static_cast<std::ptrdiff_t>(e.offset),
            payload_.begin() + static_cast<std::ptrdiff_t>(e.offset + e.length)};
  }

  Entry entry(const std::string& name, const char* want_dtype,
              const std::vector<std::size_t>& want_shape) const {
    const auto& tensors = manifest_.at("tensors");
    if (!tensors.contains(name))
      throw ArtifactBoundsError("missing tensor '" + name + "'");
    Entry e = parse_entry(name, tensors.at(name));
    if (e.dtype != want_dtype)
      throw ArtifactBoundsError("tensor '" + name + "': expected dtype " + want_dtype);
    if (!want_shape.empty() && e.shape != want_shape)
      throw ArtifactBoundsError("tensor '" + name + "': unexpected shape");
    PayloadReader{payload_}.check_range(name, e.offset, e.length);
    return e;
  }

 private:
  json manifest_;
  std::vector<std::uint8_t> payload_;
};

Matrix read_matrix(const ArtifactFile& f, const std::string& name,
                   std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, f.read_f32(name, {rows, cols}));
}

WeightSlot read_slot(const ArtifactFile& f, const std::string& name,
                     std::size_t rows, std::size_t cols) {
  if (f.has(name)) return WeightSlot{read_matrix(f, name, rows, cols)};
  const Entry codes_entry = f.entry(name + ".codes", "u8", {rows, cols});
  QuantizedTensor q;
  q.bits = codes_entry.bits;
  q.group_size = codes_entry.group_size;
  if (q.group_size == 0 || cols % q.group_size != 0)
    throw ArtifactBoundsError("tensor '" + name + "': bad group size");
  const std::size_t groups = cols / q.group_size;
  q.codes = U8Matrix(rows, cols);
  q.codes.data = f.read_u8(name + ".codes", {rows, cols});
  q.scales = Matrix(rows, groups, f.read_f32(name + ".scales", {rows, groups}));
  q.zero_points = U8Matrix(rows, groups);
  q.zero_points.data = f.read_u8(name + ".zero_points", {rows, groups});
  try {
    q.validate();
  } catch (const std::invalid_argument& ex) {
    throw ArtifactValueError("tensor '" + name + "': " + ex.what());
  }
  return WeightSlot{std::move(q)};
}

std::vector<float> read_vector(const ArtifactFile& f, const std::string& name,
                               std::size_t len) {
  return f.read_f32(name, {len});
}

}  // namespace

void save_model(const ModelBundle& m, const std::filesystem::path& path) {
  m.validate();

  json manifest;
  manifest["format"] = kArtifactVersion;
  manifest["endianness"] = "little";
  json cfg;
  cfg["n_layers"] = m.config.n_layers;
  cfg["d_model"] = m.config.d_model;
  cfg["n_heads"] = m.config.n_heads;
  cfg["d_ffn"] = m.config.d_ffn;
  cfg["vocab"] = m.config.vocab;
  cfg["max_seq"] = m.config.max_seq;
  cfg["rope_enabled"] = m.config.rope_enabled;
  cfg["norm_eps"] = static_cast<double>(m.config.norm_eps);
  manifest["config"] = std::move(cfg);

  json dir = json::object();
  PayloadWriter w;
  put_matrix(dir, w, "embedding", m.embedding);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const auto& b = m.blocks[l];
    const std::string p = block_prefix(l);
    put_slot(dir, w, p + "attn.w_q", b.w_q);
    put_slot(dir, w, p + "attn.w_k", b.w_k);
    put_slot(dir, w, p + "attn.w_v", b.w_v);
    put_slot(dir, w, p + "attn.w_o", b.w_o);
    put_slot(dir, w, p + "mlp.w_up", b.w_up);
    put_slot(dir, w, p + "mlp.w_gate", b.w_gate);
    put_slot(dir, w, p + "mlp.w_down", b.w_down);
    put_vector(dir, w, p + "pre_ln.gamma", b.pre_ln_gamma);
    put_vector(dir, w, p + "post_attn_ln.gamma", b.post_attn_ln_gamma);
    put_vector(dir, w, p + "post_attn_ln.bias", b.post_attn_ln_bias);
  }
  put_vector(dir, w, "final_norm.gamma", m.final_norm_gamma);
  put_matrix(dir, w, "head", m.head);
  manifest["tensors"] = std::move(dir);
  manifest["payload_size"] = w.bytes.size();

  const std::string text = manifest.dump();
  const std::uint64_t text_len = text.size();
  const std::size_t payload_start = align_up(8 + text.size());

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(&text_len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::vector<char> pad(payload_start - 8 - text.size(), 0);
    out.write(pad.data(), static_cast<std::streamsize>(pad.size()));
    out.write(reinterpret_cast<const char*>(w.bytes.data()),
              static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw ArtifactError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open '" + path.string() + "'");

  std::uint64_t text_len = 0;
  in.read(reinterpret_cast<char*>(&text_len), 8);
  if (!in) throw ArtifactTruncatedError("file shorter than the 8-byte header");
  const std::uint64_t file_size = std::filesystem::file_size(path);
  if (text_len > file_size - 8)
    throw ArtifactTruncatedError("declared manifest length " +
                                 std::to_string(text_len) +
                                 " exceeds the file size");

  std::string text(text_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(text_len));
  if (!in) throw ArtifactTruncatedError("file shorter than the declared manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& ex) {
    throw ArtifactError(std::string("manifest is not valid JSON: ") + ex.what());
  }
  if (!manifest.contains("format") || !manifest["format"].is_string())
    throw ArtifactVersionError("manifest has no format version string");
  if (manifest["format"].get<std::string>() != kArtifactVersion)
    throw ArtifactVersionError("unknown format version '" +
                               manifest["format"].get<std::string>() + "'");

  const std::size_t payload_start = align_up(8 + text_len);
  in.seekg(static_cast<std::streamoff>(payload_start));
  std::vector<std::uint8_t> payload;
  {
    std::vector<char> buf(1 << 16);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      payload.insert(payload.end(), buf.data(), buf.data() + in.gcount());
    }
  }
  const std::size_t declared = manifest.value("payload_size", payload.size());
  if (payload.size() < declared)
    throw ArtifactTruncatedError("payload has " + std::to_string(payload.size()) +
                                 " bytes, manifest declares " + std::to_string(declared));

  ModelConfig cfg;
  try {
    const json& c = manifest.at("config");
    cfg.n_layers = c.at("n_layers").get<std::size_t>();
    cfg.d_model = c.at("d_model").get<std::size_t>();
    cfg.n_heads = c.at("n_heads").get<std::size_t>();
    cfg.d_ffn = c.at("d_ffn").get<std::size_t>();
    cfg.vocab = c.at("vocab").get<std::size_t>();
    cfg.max_seq = c.at("max_seq").get<std::size_t>();
    cfg.rope_enabled = c.at("rope_enabled").get<bool>();
    cfg.norm_eps = static_cast<float>(c.at("norm_eps").get<double>());
  } catch (const json::exception& ex) {
    throw ArtifactError(std::string("malformed config: ") + ex.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& ex) {
    throw ArtifactError(std::string("invalid config: ") + ex.what());
  }

  const ArtifactFile f(std::move(manifest), std::move(payload));
  ModelBundle m;
  m.config = cfg;
  try {
    m.embedding = read_matrix(f, "embedding", cfg.vocab, cfg.d_model);
    m.blocks.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      auto& b = m.blocks[l];
      const std::string p = block_prefix(l);
      b.w_q = read_slot(f, p + "attn.w_q", cfg.d_model, cfg.d_model);
      b.w_k = read_slot(f, p + "attn.w_k", cfg.d_model, cfg.d_model);
      b.w_v = read_slot(f, p + "attn.w_v", cfg.d_model, cfg.d_model);
      b.w_o = read_slot(f, p + "attn.w_o", cfg.d_model, cfg.d_model);
      b.w_up = read_slot(f, p + "mlp.w_up", cfg.d_ffn, cfg.d_model);
      b.w_gate = read_slot(f, p + "mlp.w_gate", cfg.d_ffn, cfg.d_model);
      b.w_down = read_slot(f, p + "mlp.w_down", cfg.d_model, cfg.d_ffn);
      b.pre_ln_gamma = read_vector(f, p + "pre_ln.gamma", cfg.d_model);
      b.post_attn_ln_gamma = read_vector(f, p + "post_attn_ln.gamma", cfg.d_model);
      b.post_attn_ln_bias = read_vector(f, p + "post_attn_ln.bias", cfg.d_model);
    }
    m.final_norm_gamma = read_vector(f, "final_norm.gamma", cfg.d_model);
    m.head = read_matrix(f, "head", cfg.vocab, cfg.d_model);
  } catch (const std::invalid_argument& ex) {
    // Matrix constructors reject non-finite data and bad lengths
    throw ArtifactValueError(ex.what());
  }
  return m;
}

CalibrationSet load_calibration(const std::filesystem::path& path,
                                std::size_t samples, std::size_t seq_len) {
  if (samples == 0 || seq_len == 0)
    throw CalibrationError("samples and seq_len must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CalibrationError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < seq_len)
    throw CalibrationError("'" + path.string() + "' has " +
                           std::to_string(bytes.size()) +
                           " bytes, shorter than one sequence of " +
                           std::to_string(seq_len));
  CalibrationSet set;
  for (std::size_t off = 0; off + seq_len <= bytes.size() && set.sequences.size() < samples;
       off += seq_len)
    set.sequences.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                               bytes.begin() + static_cast<std::ptrdiff_t>(off + seq_len));
  return set;
}

}  // namespace d2quant
