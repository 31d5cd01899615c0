#include "dfpq/container.hpp"

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ios>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dfpq/accumulator.hpp"
#include "dfpq/quantize.hpp"

namespace dfpq {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("container: " + msg); }

// --- little-endian byte packing -------------------------------------------

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  return static_cast<std::uint32_t>(in[at]) | static_cast<std::uint32_t>(in[at + 1]) << 8 |
         static_cast<std::uint32_t>(in[at + 2]) << 16 |
         static_cast<std::uint32_t>(in[at + 3]) << 24;
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

float get_f32(const std::vector<std::uint8_t>& in, std::size_t at) {
  return std::bit_cast<float>(get_u32(in, at));
}

// --- whole-file I/O --------------------------------------------------------

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot open '" + path + "' for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail("write to '" + path + "' failed");
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail("write to '" + path + "' failed");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) fail("cannot open '" + path + "'");
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) fail("read from '" + path + "' failed");
  return bytes;
}

std::string blob_path_for(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

std::string sibling(const std::string& manifest_path, const std::string& name) {
  return (std::filesystem::path(manifest_path).parent_path() / name).string();
}

// --- tensor table ----------------------------------------------------------

// Accumulates named tensors, then packs them into one blob in sorted-name
// order and emits the locating table.
struct TensorTable {
  struct Entry {
    std::string dtype;  // "f32" | "u8" | "u16"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;
  };
  std::map<std::string, Entry> entries;

  void add_f32(const std::string& name, const std::vector<std::int64_t>& shape,
               const std::vector<float>& data) {
    Entry e;
    e.dtype = "f32";
    e.shape = shape;
    e.bytes.reserve(data.size() * 4);
    for (float v : data) put_f32(e.bytes, v);
    if (!entries.emplace(name, std::move(e)).second) fail("duplicate tensor name '" + name + "'");
  }

  void add_codes(const std::string& name, const std::vector<std::int64_t>& shape,
                 const std::vector<std::uint16_t>& codes, int n_bits) {
    Entry e;
    e.dtype = n_bits <= 8 ? "u8" : "u16";
    e.shape = shape;
    if (n_bits <= 8) {
      e.bytes.reserve(codes.size());
      for (std::uint16_t c : codes) e.bytes.push_back(static_cast<std::uint8_t>(c));
    } else {
      e.bytes.reserve(codes.size() * 2);
      for (std::uint16_t c : codes) {
        e.bytes.push_back(static_cast<std::uint8_t>(c));
        e.bytes.push_back(static_cast<std::uint8_t>(c >> 8));
      }
    }
    if (!entries.emplace(name, std::move(e)).second) fail("duplicate tensor name '" + name + "'");
  }

  // Concatenates entries in name order; fills `table` with locators.
  std::vector<std::uint8_t> pack(json& table) const {
    std::vector<std::uint8_t> blob;
    for (const auto& [name, e] : entries) {
      json t;
      t["dtype"] = e.dtype;
      t["shape"] = e.shape;
      t["offset"] = blob.size();
      t["bytes"] = e.bytes.size();
      table[name] = std::move(t);
      blob.insert(blob.end(), e.bytes.begin(), e.bytes.end());
    }
    return blob;
  }
};

std::size_t elem_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "u8") return 1;
  if (dtype == "u16") return 2;
  fail("unknown tensor dtype '" + dtype + "'");
}

// Locates one manifest tensor inside the blob, validating bounds.
struct Located {
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::size_t offset = 0;
  std::size_t count = 0;  // element count
};

Located locate(const json& table, const std::string& name,
               const std::vector<std::uint8_t>& blob) {
  if (!table.contains(name)) fail("manifest has no tensor '" + name + "'");
  const json& t = table.at(name);
  Located loc;
  loc.dtype = t.at("dtype").get<std::string>();
  loc.shape = t.at("shape").get<std::vector<std::int64_t>>();
  loc.offset = t.at("offset").get<std::size_t>();
  const std::size_t bytes = t.at("bytes").get<std::size_t>();
  std::int64_t numel = 1;
  for (std::int64_t d : loc.shape) {
    if (d < 0) fail("tensor '" + name + "' has a negative dimension");
    numel *= d;
  }
  const std::size_t esize = elem_size(loc.dtype);
  if (bytes != static_cast<std::size_t>(numel) * esize)
    fail("tensor '" + name + "': byte length does not match shape");
  if (loc.offset + bytes < loc.offset || loc.offset + bytes > blob.size())
    fail("tensor '" + name + "' lies outside the blob");
  loc.count = static_cast<std::size_t>(numel);
  return loc;
}

Tensor read_f32_tensor(const json& table, const std::string& name,
                       const std::vector<std::uint8_t>& blob) {
  const Located loc = locate(table, name, blob);
  if (loc.dtype != "f32") fail("tensor '" + name + "' is not f32");
  Tensor t;
  t.shape = loc.shape;
  t.data.resize(loc.count);
  for (std::size_t i = 0; i < loc.count; ++i) t.data[i] = get_f32(blob, loc.offset + i * 4);
  return t;
}

std::vector<std::uint16_t> read_codes(const json& table, const std::string& name,
                                      const std::vector<std::uint8_t>& blob,
                                      std::vector<std::int64_t>& shape_out) {
  const Located loc = locate(table, name, blob);
  std::vector<std::uint16_t> codes(loc.count);
  if (loc.dtype == "u8")
    for (std::size_t i = 0; i < loc.count; ++i) codes[i] = blob[loc.offset + i];
  else if (loc.dtype == "u16")
    for (std::size_t i = 0; i < loc.count; ++i)
      codes[i] = static_cast<std::uint16_t>(blob[loc.offset + i * 2] |
                                            blob[loc.offset + i * 2 + 1] << 8);
  else
    fail("tensor '" + name + "' is not a code tensor");
  shape_out = loc.shape;
  return codes;
}

// --- enum names ------------------------------------------------------------

std::string encoding_name(Encoding e) {
  return e == Encoding::SignMagnitude ? "sign-magnitude" : "twos-complement";
}

Encoding encoding_from(const std::string& s) {
  if (s == "sign-magnitude") return Encoding::SignMagnitude;
  if (s == "twos-complement") return Encoding::TwosComplement;
  fail("unknown encoding '" + s + "'");
}

std::string inf_nan_name(InfNanMode m) {
  return m == InfNanMode::ExtendNumeric ? "extend-numeric" : "reserve-inf-nan";
}

InfNanMode inf_nan_from(const std::string& s) {
  if (s == "extend-numeric") return InfNanMode::ExtendNumeric;
  if (s == "reserve-inf-nan") return InfNanMode::ReserveInfNan;
  fail("unknown inf/nan mode '" + s + "'");
}

json format_to_json(const FloatFormat& f) {
  json j;
  j["n"] = f.n;
  j["p"] = f.p;
  j["encoding"] = encoding_name(f.encoding);
  j["subnormals"] = f.subnormals;
  j["inf_nan"] = inf_nan_name(f.inf_nan);
  return j;
}

FloatFormat format_from_json(const json& j) {
  FloatFormat f;
  f.n = j.at("n").get<int>();
  f.p = j.at("p").get<int>();
  f.encoding = encoding_from(j.at("encoding").get<std::string>());
  f.subnormals = j.at("subnormals").get<bool>();
  f.inf_nan = inf_nan_from(j.at("inf_nan").get<std::string>());
  f.validate();
  return f;
}

// --- node <-> json ---------------------------------------------------------

// Parameter slots a node can carry, in manifest order.
const std::vector<std::pair<std::string, Tensor Node::*>>& tensor_slots() {
  static const std::vector<std::pair<std::string, Tensor Node::*>> slots = {
      {"weight", &Node::weight},         {"bias", &Node::bias},
      {"bn_mean", &Node::bn_mean},       {"bn_var", &Node::bn_var},
      {"bn_gamma", &Node::bn_gamma},     {"bn_beta", &Node::bn_beta},
  };
  return slots;
}

json node_to_json(const Node& n, TensorTable& table) {
  json j;
  j["id"] = n.id;
  j["kind"] = node_kind_name(n.kind);
  j["inputs"] = n.inputs;
  j["outputs"] = n.outputs;
  j["kernel"] = n.kernel;
  j["stride"] = n.stride;
  j["pad"] = n.pad;
  j["groups"] = n.groups;
  j["axis"] = n.axis;
  j["eps"] = n.eps;
  j["factor"] = n.factor;
  j["shape"] = n.shape;
  json slots = json::object();
  for (const auto& [slot, member] : tensor_slots()) {
    const Tensor& t = n.*member;
    if (t.data.empty()) continue;
    const std::string name = n.id + "." + slot;
    table.add_f32(name, t.shape, t.data);
    slots[slot] = name;
  }
  j["tensors"] = std::move(slots);
  return j;
}

Node node_from_json(const json& j, const json& table, const std::vector<std::uint8_t>& blob) {
  Node n;
  n.id = j.at("id").get<std::string>();
  n.kind = node_kind_from_name(j.at("kind").get<std::string>());
  n.inputs = j.at("inputs").get<std::vector<std::string>>();
  n.outputs = j.at("outputs").get<std::vector<std::string>>();
  n.kernel = j.at("kernel").get<int>();
  n.stride = j.at("stride").get<int>();
  n.pad = j.at("pad").get<int>();
  n.groups = j.at("groups").get<int>();
  n.axis = j.at("axis").get<int>();
  n.eps = j.at("eps").get<double>();
  n.factor = j.at("factor").get<double>();
  n.shape = j.at("shape").get<std::vector<std::int64_t>>();
  const json& slots = j.at("tensors");
  for (const auto& [slot, member] : tensor_slots()) {
    if (!slots.contains(slot)) continue;
    n.*member = read_f32_tensor(table, slots.at(slot).get<std::string>(), blob);
  }
  return n;
}

json graph_to_json(const Graph& g, TensorTable& table) {
  json nodes = json::array();
  for (const Node& n : g.nodes) nodes.push_back(node_to_json(n, table));
  return nodes;
}

Graph graph_from_json(const json& nodes, const json& table,
                      const std::vector<std::uint8_t>& blob) {
  Graph g;
  for (const json& j : nodes) g.nodes.push_back(node_from_json(j, table, blob));
  g.validate();
  return g;
}

// Writes manifest + blob; `fill` adds the container-specific fields.
template <typename Fill>
void save_container(const std::string& manifest_path, const std::string& kind, Fill fill) {
  const std::string blob_path = blob_path_for(manifest_path);
  TensorTable table;
  json manifest;
  manifest["kind"] = kind;
  manifest["blob"] = std::filesystem::path(blob_path).filename().string();
  fill(manifest, table);
  json locators = json::object();
  const std::vector<std::uint8_t> blob = table.pack(locators);
  manifest["tensors"] = std::move(locators);
  write_file(manifest_path, manifest.dump(2) + "\n");
  write_file(blob_path, blob);
}

json parse_manifest(const std::string& manifest_path, const std::string& kind,
                    std::vector<std::uint8_t>& blob) {
  const std::vector<std::uint8_t> text = read_file(manifest_path);
  json manifest;
  try {
    manifest = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    fail("'" + manifest_path + "' is not valid JSON: " + e.what());
  }
  if (!manifest.is_object() || manifest.value("kind", "") != kind)
    fail("'" + manifest_path + "' is not a " + kind + " manifest");
  blob = read_file(sibling(manifest_path, manifest.at("blob").get<std::string>()));
  return manifest;
}

}  // namespace

// --- float model -----------------------------------------------------------

void save_model(const Graph& g, const std::string& manifest_path) {
  g.validate();
  save_container(manifest_path, "dfpq-float-model", [&](json& manifest, TensorTable& table) {
    manifest["nodes"] = graph_to_json(g, table);
  });
}

Graph load_model(const std::string& manifest_path) {
  std::vector<std::uint8_t> blob;
  const json manifest = parse_manifest(manifest_path, "dfpq-float-model", blob);
  return graph_from_json(manifest.at("nodes"), manifest.at("tensors"), blob);
}

// --- quantized model -------------------------------------------------------

void save_quantized(const QuantizedContainer& c, const std::string& manifest_path) {
  c.model.graph.validate();
  c.model.format.validate();
  save_container(manifest_path, "dfpq-quantized-model", [&](json& manifest, TensorTable& table) {
    manifest["format"] = format_to_json(c.model.format);
    manifest["accumulator_bits"] = c.accumulator_bits;
    manifest["bias_on_output_grid"] = c.bias_on_output_grid;
    manifest["nodes"] = graph_to_json(c.model.graph, table);
    manifest["thresholds"] = c.model.thresholds;

    json quantized = json::object();
    for (const auto& [node, q] : c.model.weights) {
      const std::string name = node + ".codes";
      table.add_codes(name, q.shape, q.codes, q.format.n);
      json entry;
      entry["codes"] = name;
      entry["scales"] = q.scales;
      quantized[node] = std::move(entry);
    }
    manifest["quantized"] = std::move(quantized);

    json biases = json::object();
    for (const auto& [node, b] : c.model.biases) {
      const std::string name = node + ".qbias";
      table.add_f32(name, {static_cast<std::int64_t>(b.size())}, b);
      biases[node] = name;
    }
    manifest["biases"] = std::move(biases);

    json records = json::array();
    for (const auto& [id, rec] : c.records) {
      json r;
      r["tensor"] = id;
      r["gamma"] = rec.gamma;
      r["delta"] = rec.delta;
      r["format"] = format_to_json(rec.format);
      r["degenerate"] = rec.degenerate;
      records.push_back(std::move(r));
    }
    manifest["calibration"] = std::move(records);

    json budgets = json::array();
    for (const NodeBudget& b : c.budgets) {
      json r;
      r["node"] = b.node;
      r["terms"] = b.terms;
      r["q_required"] = b.q_required;
      r["q_minimal"] = b.q_minimal;
      r["n_cap"] = b.n_cap.str();
      budgets.push_back(std::move(r));
    }
    manifest["budgets"] = std::move(budgets);
  });
}

QuantizedContainer load_quantized(const std::string& manifest_path) {
  std::vector<std::uint8_t> blob;
  const json manifest = parse_manifest(manifest_path, "dfpq-quantized-model", blob);
  const json& table = manifest.at("tensors");

  QuantizedContainer c;
  c.model.format = format_from_json(manifest.at("format"));
  c.accumulator_bits = manifest.at("accumulator_bits").get<int>();
  c.bias_on_output_grid = manifest.at("bias_on_output_grid").get<bool>();
  c.model.graph = graph_from_json(manifest.at("nodes"), table, blob);
  c.model.thresholds = manifest.at("thresholds").get<std::map<std::string, double>>();

  for (const auto& [node, entry] : manifest.at("quantized").items()) {
    QTensor q;
    q.format = c.model.format;
    q.scales = entry.at("scales").get<std::vector<double>>();
    q.codes = read_codes(table, entry.at("codes").get<std::string>(), blob, q.shape);
    q.validate();
    c.model.weights.emplace(node, std::move(q));
  }
  for (const auto& [node, name] : manifest.at("biases").items()) {
    const Tensor t = read_f32_tensor(table, name.get<std::string>(), blob);
    c.model.biases.emplace(node, t.data);
  }
  for (const json& r : manifest.at("calibration")) {
    CalibrationRecord rec;
    rec.tensor_id = r.at("tensor").get<std::string>();
    rec.gamma = r.at("gamma").get<std::vector<double>>();
    rec.delta = r.at("delta").get<double>();
    rec.format = format_from_json(r.at("format"));
    rec.degenerate = r.at("degenerate").get<bool>();
    c.records.emplace(rec.tensor_id, std::move(rec));
  }
  for (const json& r : manifest.at("budgets")) {
    NodeBudget b;
    b.node = r.at("node").get<std::string>();
    b.terms = r.at("terms").get<std::int64_t>();
    b.q_required = r.at("q_required").get<int>();
    b.q_minimal = r.at("q_minimal").get<int>();
    b.n_cap = BigInt(r.at("n_cap").get<std::string>());
    c.budgets.push_back(std::move(b));
  }
  return c;
}

// --- datasets --------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[6] = {'D', 'F', 'P', 'T', '1', '\0'};

std::string dataset_file(const std::string& dir) {
  return (std::filesystem::path(dir) / "data.tensor").string();
}

std::string labels_file(const std::string& dir) {
  return (std::filesystem::path(dir) / "labels.txt").string();
}
}  // namespace

void save_dataset(const Dataset& d, const std::string& dir) {
  if (d.images.empty()) fail("dataset needs at least one image");
  const std::vector<std::int64_t>& shape = d.images.front().shape;
  for (const Tensor& t : d.images) {
    check_tensor(t, "dataset image");
    if (t.shape != shape) fail("dataset images must share one shape");
  }
  if (!d.labels.empty() && d.labels.size() != d.images.size())
    fail("dataset has " + std::to_string(d.images.size()) + " images but " +
         std::to_string(d.labels.size()) + " labels");

  std::filesystem::create_directories(dir);
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), kDatasetMagic, kDatasetMagic + sizeof(kDatasetMagic));
  put_u32(bytes, static_cast<std::uint32_t>(d.images.size()));
  put_u32(bytes, static_cast<std::uint32_t>(shape.size()));
  for (std::int64_t dim : shape) put_u32(bytes, static_cast<std::uint32_t>(dim));
  for (const Tensor& t : d.images)
    for (float v : t.data) put_f32(bytes, v);
  write_file(dataset_file(dir), bytes);

  if (!d.labels.empty()) {
    std::string text;
    for (int label : d.labels) text += std::to_string(label) + "\n";
    write_file(labels_file(dir), text);
  }
}

Dataset load_dataset(const std::string& dir) {
  const std::string path = dataset_file(dir);
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < sizeof(kDatasetMagic) + 8 ||
      !std::equal(kDatasetMagic, kDatasetMagic + sizeof(kDatasetMagic), bytes.begin()))
    fail("'" + path + "' is not a dataset tensor file");
  std::size_t at = sizeof(kDatasetMagic);
  const std::uint32_t count = get_u32(bytes, at);
  const std::uint32_t rank = get_u32(bytes, at + 4);
  at += 8;
  if (count == 0) fail("'" + path + "' holds no images");
  if (rank == 0 || rank > 8) fail("'" + path + "' has an unreasonable shape rank");
  if (bytes.size() < at + rank * 4) fail("'" + path + "' is truncated");
  std::vector<std::int64_t> shape(rank);
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes, at);
    numel *= static_cast<std::size_t>(shape[i]);
    at += 4;
  }
  if (bytes.size() != at + static_cast<std::size_t>(count) * numel * 4)
    fail("'" + path + "' size does not match its header");

  Dataset d;
  d.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.shape = shape;
    t.data.resize(numel);
    for (std::size_t k = 0; k < numel; ++k) {
      t.data[k] = get_f32(bytes, at);
      at += 4;
    }
    d.images.push_back(std::move(t));
  }

  if (std::filesystem::exists(labels_file(dir))) {
    std::ifstream f(labels_file(dir));
    if (!f) fail("cannot open '" + labels_file(dir) + "'");
    int label = 0;
    while (f >> label) d.labels.push_back(label);
    if (d.labels.size() != d.images.size())
      fail("'" + labels_file(dir) + "' holds " + std::to_string(d.labels.size()) +
           " labels for " + std::to_string(d.images.size()) + " images");
  }
  return d;
}

}  // namespace dfpq
