#include "satba/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "satba/hash.hpp"
#include "satba/image.hpp"

namespace satba {

std::string architecture_hash(const std::string& architecture) {
  return sha256_hex(architecture).substr(0, 16);
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     torch::nn::Module& module) {
  if (header.architecture.find('\n') != std::string::npos) {
    throw std::invalid_argument("architecture descriptor must be a single line");
  }
  torch::serialize::OutputArchive archive;
  module.save(archive);
  std::ostringstream blob;
  archive.save_to(blob);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os << "SATBA-CKPT " << header.version << ' ' << header.kind << ' '
     << architecture_hash(header.architecture) << ' ' << header.architecture << '\n';
  const std::string bytes = blob.str();
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

namespace {

CheckpointHeader parse_header(std::istream& is, const std::filesystem::path& path,
                              std::string* hash_out) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty checkpoint " + path.string());
  std::istringstream ls(line);
  std::string magic, hash;
  CheckpointHeader h;
  ls >> magic >> h.version >> h.kind >> hash;
  if (magic != "SATBA-CKPT" || !ls) throw std::runtime_error("not a checkpoint: " + path.string());
  std::getline(ls >> std::ws, h.architecture);
  if (architecture_hash(h.architecture) != hash) {
    throw std::runtime_error("corrupt checkpoint header: " + path.string());
  }
  if (hash_out) *hash_out = hash;
  return h;
}

}  // namespace

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint " + path.string());
  return parse_header(is, path, nullptr);
}

void load_checkpoint(const std::filesystem::path& path, const CheckpointHeader& expected,
                     torch::nn::Module& module) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint " + path.string());
  const CheckpointHeader h = parse_header(is, path, nullptr);
  if (h.version != expected.version) {
    throw ValidationError("checkpoint version " + std::to_string(h.version) + " unsupported");
  }
  if (h.kind != expected.kind) {
    throw ValidationError("checkpoint holds a " + h.kind + ", expected " + expected.kind);
  }
  if (h.architecture != expected.architecture) {
    throw ValidationError("checkpoint architecture mismatch: '" + h.architecture + "' vs '" +
                          expected.architecture + "'");
  }
  const std::string bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  torch::serialize::InputArchive archive;
  archive.load_from(bytes.data(), bytes.size());
  module.load(archive);
}

}  // namespace satba
