#include <gtest/gtest.h>

#include <random>

#include "immunity/udp_transport.hpp"
#include "immunity/wire.hpp"

using namespace immunity;
using namespace immunity::wire;

namespace {

FlowLogEntry random_entry(std::mt19937_64& rng) {
  FlowKey k{Ipv4(static_cast<std::uint32_t>(rng())), Ipv4(static_cast<std::uint32_t>(rng())),
            static_cast<std::uint16_t>(rng()), static_cast<std::uint16_t>(rng()), static_cast<std::uint8_t>(rng())};
  return {k, static_cast<std::uint8_t>(rng())};
}

WireError error_of(std::span<const std::uint8_t> bytes) {
  try {
    decode_frame(bytes);
  } catch (const WireException& e) {
    return e.code();
  }
  ADD_FAILURE() << "frame decoded unexpectedly";
  return WireError::BadField;
}

}  // namespace

TEST(Wire, LengthBucket) {
  EXPECT_EQ(length_bucket(0), 0);
  EXPECT_EQ(length_bucket(1), 1);
  EXPECT_EQ(length_bucket(2), 1);
  EXPECT_EQ(length_bucket(3), 2);
  EXPECT_EQ(length_bucket(126), 6);
  EXPECT_EQ(length_bucket(127), 7);
  EXPECT_EQ(length_bucket(1460), 7);
  for (std::uint8_t b = 0; b < 8; ++b) EXPECT_EQ(length_bucket(bucket_floor(b)), b);
}

TEST(Wire, EntryAuxPacksFlagsAndBucket) {
  FlowKey k{Ipv4(1, 2, 3, 4), Ipv4(5, 6, 7, 8), 1, 2, 6};
  auto e = FlowLogEntry::make(k, TcpFlags::parse("AP"), 100);
  EXPECT_EQ(e.aux, (6 << 5) | TcpFlags::kAck | TcpFlags::kPsh);
  EXPECT_EQ(e.flags(), TcpFlags::parse("AP"));
  EXPECT_EQ(e.bucket(), 6);
}

TEST(Wire, ThreeEntryFrameLayout) {
  std::vector<FlowLogEntry> es;
  for (std::uint8_t i = 0; i < 3; ++i)
    es.push_back({FlowKey{Ipv4(10, 0, 0, i), Ipv4(10, 0, 1, i), static_cast<std::uint16_t>(0x100 + i), 80, 6},
                  static_cast<std::uint8_t>(0x20 + i)});
  auto f = encode_flow_log(es);
  std::vector<std::uint8_t> expected{1, 1, 3, 0};
  for (std::uint8_t i = 0; i < 3; ++i) {
    std::vector<std::uint8_t> entry{10, 0, 0, i, 10, 0, 1, i, 0x01, i, 0, 80, 6, static_cast<std::uint8_t>(0x20 + i)};
    expected.insert(expected.end(), entry.begin(), entry.end());
  }
  expected.resize(60, 0);
  EXPECT_EQ(std::vector<std::uint8_t>(f.begin(), f.end()), expected);
  EXPECT_EQ(std::get<FlowLogMsg>(decode_frame(f)).entries, es);
}

TEST(Wire, SingleEntryHasThirtyTwoTrailingZeros) {
  std::mt19937_64 rng(1);
  std::vector<FlowLogEntry> es{random_entry(rng)};
  auto f = encode_flow_log(es);
  EXPECT_EQ(f[2], 1);
  EXPECT_TRUE(std::all_of(f.begin() + 18, f.end(), [](auto b) { return b == 0; }));
  EXPECT_EQ(f.size() - 18, 42u);
}

TEST(Wire, EncodeRejectsBadCounts) {
  std::mt19937_64 rng(2);
  std::vector<FlowLogEntry> four(4, random_entry(rng));
  try {
    encode_flow_log(four);
    FAIL();
  } catch (const WireException& e) {
    EXPECT_EQ(e.code(), WireError::TooManyEntries);
  }
  try {
    encode_flow_log({});
    FAIL();
  } catch (const WireException& e) {
    EXPECT_EQ(e.code(), WireError::EmptyBatch);
  }
}

TEST(Wire, RoundTripAllMessageKinds) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = 1 + i % 3;
    std::vector<FlowLogEntry> fl;
    std::vector<HhLogEntry> hh;
    std::vector<FlowKey> keys;
    for (std::size_t j = 0; j < n; ++j) {
      auto e = random_entry(rng);
      fl.push_back(e);
      hh.push_back({e.key, static_cast<std::uint8_t>(rng())});
      keys.push_back(e.key);
    }
    EXPECT_EQ(std::get<FlowLogMsg>(decode_frame(encode_flow_log(fl))).entries, fl);
    EXPECT_EQ(std::get<HhLogMsg>(decode_frame(encode_hh_log(hh))).entries, hh);
    EXPECT_EQ(std::get<OffInsertMsg>(decode_frame(encode_off_insert(keys))).keys, keys);
  }
  MstUpdateMsg m{Direction::Destination, 32, Ipv4(10, 1, 2, 3), Reason::DistSynVictim};
  auto mf = encode_mst_update(m);
  EXPECT_EQ(mf.size(), 12u);
  EXPECT_EQ(std::get<MstUpdateMsg>(decode_frame(mf)), m);
  const std::array<std::uint8_t, 12> expected{1, 4, 1, 32, 10, 1, 2, 3, 1, 0, 0, 0};
  EXPECT_EQ(mf, expected);
}

TEST(Wire, HhLogEstimateEncoding) {
  EXPECT_EQ(log2_estimate(0), 0);
  EXPECT_EQ(log2_estimate(1), 0);
  EXPECT_EQ(log2_estimate(200'000), 17);
  EXPECT_EQ(log2_estimate(~0ull), 63);
}

TEST(Wire, MalformedFramesRejectedWithDistinctErrors) {
  std::mt19937_64 rng(4);
  std::vector<FlowLogEntry> es{random_entry(rng), random_entry(rng)};
  const auto good = encode_flow_log(es);

  EXPECT_EQ(error_of(std::span(good.data(), 3)), WireError::ShortFrame);
  EXPECT_EQ(error_of(std::span(good.data(), 59)), WireError::ShortFrame);
  std::vector<std::uint8_t> longer(good.begin(), good.end());
  longer.push_back(0);
  EXPECT_EQ(error_of(longer), WireError::BadLength);

  auto f = good;
  f[0] = 2;
  EXPECT_EQ(error_of(f), WireError::BadVersion);
  f = good;
  f[1] = 9;
  EXPECT_EQ(error_of(f), WireError::BadType);
  f = good;
  f[2] = 4;
  EXPECT_EQ(error_of(f), WireError::BadCount);
  f[2] = 0;
  EXPECT_EQ(error_of(f), WireError::BadCount);
  f = good;
  f[3] = 1;
  EXPECT_EQ(error_of(f), WireError::DirtyPadding);
  f = good;
  f[59] = 1;
  EXPECT_EQ(error_of(f), WireError::DirtyPadding);

  std::vector<FlowKey> keys{es[0].key};
  auto off = encode_off_insert(keys);
  off[4 + 13] = 1;
  EXPECT_EQ(error_of(off), WireError::BadField);

  auto mst = encode_mst_update({Direction::Source, 24, Ipv4(10, 0, 0, 0), Reason::Scan});
  auto m2 = mst;
  m2[2] = 2;
  EXPECT_EQ(error_of(m2), WireError::BadField);
  m2 = mst;
  m2[7] = 1;  // host bit under /24
  EXPECT_EQ(error_of(m2), WireError::BadField);
  m2 = mst;
  m2[11] = 1;
  EXPECT_EQ(error_of(m2), WireError::DirtyPadding);
  EXPECT_EQ(error_of(std::span(mst.data(), 11)), WireError::ShortFrame);
}

TEST(Wire, DecodedFramesReencodeToInput) {
  std::mt19937_64 rng(5);
  int accepted = 0;
  for (int i = 0; i < 200'000; ++i) {
    Frame f{};
    f[0] = 1;
    f[1] = static_cast<std::uint8_t>(1 + rng() % 3);
    f[2] = static_cast<std::uint8_t>(rng() % 5);
    const auto n = std::min<std::size_t>(f[2], 3);
    for (std::size_t j = 4; j < 4 + n * 14; ++j) f[j] = static_cast<std::uint8_t>(rng());
    if (rng() % 4 == 0) f[4 + rng() % 56] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    try {
      auto msg = decode_frame(f);
      Frame re = std::visit(
          [](const auto& m) -> Frame {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, FlowLogMsg>) {
              return encode_flow_log(m.entries);
            } else if constexpr (std::is_same_v<T, HhLogMsg>) {
              return encode_hh_log(m.entries);
            } else if constexpr (std::is_same_v<T, OffInsertMsg>) {
              return encode_off_insert(m.keys);
            } else {
              return Frame{};
            }
          },
          msg);
      ASSERT_EQ(re, f);
      ++accepted;
    } catch (const WireException&) {
    }
  }
  EXPECT_GT(accepted, 10000);
}

TEST(FlowLogBufferTest, BatchesOfThree) {
  std::mt19937_64 rng(6);
  FlowLogBuffer<int> buf(Micros{1000});
  std::vector<FlowLogEntry> all;
  std::vector<FlowLogBatch<int>> frames;
  for (int i = 0; i < 9; ++i) {
    all.push_back(random_entry(rng));
    if (auto b = buf.push(all.back(), Micros{i}, i)) frames.push_back(*b);
    if (i % 3 < 2) {
      EXPECT_EQ(frames.size(), static_cast<std::size_t>(i / 3));
    }
  }
  ASSERT_EQ(frames.size(), 3u);
  std::vector<FlowLogEntry> seen;
  std::vector<int> side;
  for (auto& b : frames) {
    auto m = std::get<FlowLogMsg>(decode_frame(b.frame));
    seen.insert(seen.end(), m.entries.begin(), m.entries.end());
    side.insert(side.end(), b.side.begin(), b.side.end());
  }
  EXPECT_EQ(seen, all);
  EXPECT_EQ(side, (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(FlowLogBufferTest, TimeoutFlushesPartialFrame) {
  std::mt19937_64 rng(7);
  FlowLogBuffer<> buf(Micros{1000});
  EXPECT_FALSE(buf.push(random_entry(rng), Micros{100}).has_value());
  EXPECT_EQ(buf.deadline(), Micros{1100});
  EXPECT_FALSE(buf.poll(Micros{1099}).has_value());
  auto b = buf.poll(Micros{1100});
  ASSERT_TRUE(b);
  EXPECT_EQ(b->frame[2], 1);
  EXPECT_EQ(buf.size(), 0u);
  EXPECT_FALSE(buf.deadline().has_value());
}

TEST(FlowLogBufferTest, LatePushEmitsImmediately) {
  std::mt19937_64 rng(8);
  FlowLogBuffer<> buf(Micros{1000});
  buf.push(random_entry(rng), Micros{0});
  auto b = buf.push(random_entry(rng), Micros{5000});
  ASSERT_TRUE(b);
  EXPECT_EQ(b->frame[2], 2);
}

TEST(UdpTransport, LoopbackCarriesIdenticalBytes) {
  std::mt19937_64 rng(9);
  UdpEndpoint nic, sw;
  std::vector<FlowLogEntry> es{random_entry(rng), random_entry(rng), random_entry(rng)};
  auto f = encode_flow_log(es);
  sw.send_to(f, nic.port());
  auto got = nic.receive(std::chrono::milliseconds(2000));
  ASSERT_TRUE(got);
  EXPECT_EQ(*got, std::vector<std::uint8_t>(f.begin(), f.end()));
  EXPECT_EQ(std::get<FlowLogMsg>(decode_frame(*got)).entries, es);
}
