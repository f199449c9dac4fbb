// Copyright 2026 The ABP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "abp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "abp/errors.hpp"

namespace abp {

namespace {

constexpr char kMagic[8] = {'A', 'B', 'P', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::uint64_t offset() const noexcept { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw ParseError(std::string("checkpoint v") + std::to_string(kCheckpointVersion) +
                                 ": truncated " + what,
                             pos_);
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

nlohmann::json gate_geometry(const GatedNetwork& net) {
    const auto& c = net.conv_gate_spec();
    const auto& r = net.recur_gate_spec();
    return {{"conv",
             {{"reduce_channels", c.reduce_channels},
              {"kernel", c.kernel},
              {"strides", {c.conv_strides[0], c.conv_strides[1]}},
              {"fc_in", c.fc_in}}},
            {"recur", {{"embed_dim", r.embed_dim}, {"hidden_dim", r.hidden_dim}}}};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const GatedNetwork& net, const GateMask& mask,
                                            const nlohmann::json& meta) {
    if (mask.size() != net.num_blocks()) {
        throw ContractViolation("mask does not match network block count");
    }
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    const nlohmann::json header = {{"spec", to_json(net.spec())},
                                   {"gate", to_string(net.gate_kind())},
                                   {"gate_geometry", gate_geometry(net)},
                                   {"meta", meta}};
    w.str(header.dump());

    const auto params = net.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const Param* p : params) {
        w.str(p->name);
        w.u32(static_cast<std::uint32_t>(p->value.n()));
        w.u32(static_cast<std::uint32_t>(p->value.c()));
        w.u32(static_cast<std::uint32_t>(p->value.h()));
        w.u32(static_cast<std::uint32_t>(p->value.w()));
        for (float v : p->value.span()) w.f32(v);
    }
    w.u32(static_cast<std::uint32_t>(mask.size()));
    for (BlockState s : mask.states()) {
        const auto b = static_cast<std::uint8_t>(s);
        w.raw(&b, 1);
    }
    w.u32(static_cast<std::uint32_t>(mask.exempt().size()));
    for (int e : mask.exempt()) w.u32(static_cast<std::uint32_t>(e));
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(sizeof kMagic, "magic");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw ParseError("not an ABP checkpoint (bad magic)", 0);
    }
    for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8("magic");
    const std::uint64_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version) +
                             " (expected " + std::to_string(kCheckpointVersion) + ")",
                         version_at);
    }
    const std::uint64_t header_at = r.offset();
    nlohmann::json header;
    GatedNetwork net;
    try {
        header = nlohmann::json::parse(r.str("header"));
        ConvGateSpec conv;
        RecurGateSpec recur;
        const auto& geo = header.at("gate_geometry");
        conv.reduce_channels = geo.at("conv").at("reduce_channels").get<int>();
        conv.kernel = geo.at("conv").at("kernel").get<int>();
        conv.conv_strides = {geo.at("conv").at("strides").at(0).get<int>(),
                             geo.at("conv").at("strides").at(1).get<int>()};
        conv.fc_in = geo.at("conv").at("fc_in").get<int>();
        recur.embed_dim = geo.at("recur").at("embed_dim").get<int>();
        recur.hidden_dim = geo.at("recur").at("hidden_dim").get<int>();
        net = GatedNetwork(network_spec_from_json(header.at("spec")),
                           gate_kind_from_string(header.at("gate").get<std::string>()), 0, conv,
                           recur);
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(std::string("checkpoint v1: bad header: ") + e.what(), header_at);
    }

    auto params = net.parameters();
    const std::uint64_t count_at = r.offset();
    const std::uint32_t count = r.u32("tensor count");
    if (count != params.size()) {
        throw ParseError("checkpoint v1: " + std::to_string(count) + " tensors, network expects " +
                             std::to_string(params.size()),
                         count_at);
    }
    for (Param* p : params) {
        const std::uint64_t at = r.offset();
        const std::string name = r.str("tensor name");
        const int n = static_cast<int>(r.u32("tensor shape"));
        const int c = static_cast<int>(r.u32("tensor shape"));
        const int h = static_cast<int>(r.u32("tensor shape"));
        const int w = static_cast<int>(r.u32("tensor shape"));
        if (name != p->name || n != p->value.n() || c != p->value.c() || h != p->value.h() ||
            w != p->value.w()) {
            throw ParseError("checkpoint v1: tensor '" + name + "' does not match expected '" +
                                 p->name + "' " + p->value.shape_string(),
                             at);
        }
        r.need(p->value.size() * 4, "tensor data");
        for (auto& v : p->value.span()) v = r.f32("tensor data");
    }
    const std::uint64_t blocks_at = r.offset();
    const std::uint32_t nblocks = r.u32("block count");
    if (static_cast<int>(nblocks) != net.num_blocks()) {
        throw ParseError("checkpoint v1: mask block count mismatch", blocks_at);
    }
    std::vector<BlockState> states;
    for (std::uint32_t i = 0; i < nblocks; ++i) {
        const std::uint64_t at = r.offset();
        const std::uint8_t s = r.u8("block state");
        if (s > 2) throw ParseError("checkpoint v1: invalid block state", at);
        states.push_back(static_cast<BlockState>(s));
    }
    std::set<int> exempt;
    const std::uint32_t nexempt = r.u32("exempt count");
    for (std::uint32_t i = 0; i < nexempt; ++i) {
        exempt.insert(static_cast<int>(r.u32("exempt index")));
    }
    if (!r.at_end()) throw ParseError("checkpoint v1: trailing bytes", r.offset());

    Checkpoint ck;
    try {
        ck.mask = GateMask(std::move(states), std::move(exempt));
    } catch (const ContractViolation& e) {
        throw ParseError(std::string("checkpoint v1: invalid mask: ") + e.what(), blocks_at);
    }
    ck.net = std::move(net);
    ck.meta = header.value("meta", nlohmann::json::object());
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const GatedNetwork& net,
                     const GateMask& mask, const nlohmann::json& meta) {
    const auto bytes = encode_checkpoint(net, mask, meta);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace abp
