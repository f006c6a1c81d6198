#include "afp/checkpoint.hpp"

#include "binio.hpp"

namespace afp {

namespace {

constexpr std::uint16_t kVersion = 1;

void write_arch(detail::BinaryWriter& w, const EncoderArch& a) {
  for (int v : {a.n_mels, a.n_frames, a.base_channels, a.down_blocks, a.embedding_dim, a.head_hidden,
                a.attention_after})
    w.put<std::int32_t>(v);
  for (double v : {a.attention_scale, a.bn_eps, a.bn_momentum}) w.put<double>(v);
}

EncoderArch read_arch(detail::BinaryReader& r) {
  EncoderArch a;
  for (int* v : {&a.n_mels, &a.n_frames, &a.base_channels, &a.down_blocks, &a.embedding_dim,
                 &a.head_hidden, &a.attention_after})
    *v = r.get<std::int32_t>();
  for (double* v : {&a.attention_scale, &a.bn_eps, &a.bn_momentum}) *v = r.get<double>();
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params) {
  detail::BinaryWriter w;
  w.tag("AFPC");
  w.put<std::uint16_t>(kVersion);
  write_arch(w, params.arch);
  std::uint32_t count = 0;
  for_each_tensor(params, [&](const std::string&, const std::vector<float>&, TensorRole) { ++count; });
  w.put<std::uint32_t>(count);
  for_each_tensor(params, [&](const std::string& name, const std::vector<float>& v, TensorRole) {
    w.str(name);
    w.put<std::uint64_t>(v.size());
    w.floats(v);
  });
  w.commit(path);
}

EncoderParams<float> load_checkpoint(const std::filesystem::path& path) {
  detail::BinaryReader r(path, "checkpoint");
  r.expect_magic("AFPC");
  if (const auto version = r.get<std::uint16_t>(); version != kVersion)
    r.fail("unsupported version " + std::to_string(version));
  const EncoderArch arch = read_arch(r);
  EncoderParams<float> params;
  try {
    params = init_encoder<float>(arch, 0);
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid architecture: ") + e.what());
  }
  std::uint32_t expected = 0;
  for_each_tensor(params, [&](const std::string&, std::vector<float>&, TensorRole) { ++expected; });
  if (r.get<std::uint32_t>() != expected) r.fail("tensor count does not match architecture");
  for_each_tensor(params, [&](const std::string& name, std::vector<float>& v, TensorRole) {
    const std::string stored = r.str();
    if (stored != name) r.fail("expected tensor " + name + ", found " + stored);
    if (r.get<std::uint64_t>() != v.size()) r.fail("tensor " + name + " has the wrong size");
    r.floats(v);
  });
  r.expect_end();
  return params;
}

}  // namespace afp
