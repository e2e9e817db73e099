#include "icshunt/error.hpp"
#include "icshunt/modbus_codec.hpp"

#include "generators.hpp"

#include <gtest/gtest.h>

using namespace icshunt;
using namespace icshunt::modbus;

namespace {

ErrorCode decode_error(std::vector<std::uint8_t> bytes) {
    try {
        decode_frame(bytes);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode succeeded";
    return ErrorCode::parse;
}

}  // namespace

TEST(ModbusCodec, DecodesWriteSingleCoil) {
    const std::vector<std::uint8_t> bytes{0x00, 0x01, 0x00, 0x00, 0x00, 0x06, 0x01, 0x05, 0x00, 0x00, 0xFF, 0x00};
    const auto frame = decode_frame(bytes, Direction::request);
    EXPECT_EQ(frame.header.transaction_id, 1);
    EXPECT_EQ(frame.header.unit_id, 1);
    EXPECT_EQ(frame.header.length, 6);
    EXPECT_EQ(frame.pdu.function_code, 0x05);
    EXPECT_EQ(std::get<WriteSingleCoil>(frame.pdu.body), (WriteSingleCoil{0, coil_on}));
    EXPECT_EQ(encode_frame(frame), bytes);
    EXPECT_EQ(decode_frame(encode_frame(frame), Direction::request), frame);
}

TEST(ModbusCodec, DecodesExceptionResponse) {
    const std::vector<std::uint8_t> bytes{0x00, 0x02, 0x00, 0x00, 0x00, 0x03, 0x03, 0x85, 0x02};
    const auto frame = decode_frame(bytes, Direction::response);
    EXPECT_EQ(frame.header.unit_id, 3);
    EXPECT_EQ(std::get<ExceptionResponse>(frame.pdu.body), (ExceptionResponse{0x05, 0x02}));
    EXPECT_EQ(classify_pdu(frame), PduKind::exception);
}

TEST(ModbusCodec, RejectsMalformedInput) {
    EXPECT_EQ(decode_error({}), ErrorCode::truncation);
    EXPECT_EQ(decode_error({0, 1, 0, 0, 0, 2, 1}), ErrorCode::truncation);
    EXPECT_EQ(decode_error({0, 1, 0, 1, 0, 2, 1, 3}), ErrorCode::not_modbus);
    EXPECT_EQ(decode_error({0, 1, 0, 0, 0, 9, 1, 3}), ErrorCode::length);
    EXPECT_EQ(decode_error({0, 1, 0, 0, 0, 1, 1, 3}), ErrorCode::length);
}

TEST(ModbusCodec, ResponseToReadStaysRaw) {
    // Byte count 4 followed by two registers: the body is 5 bytes, so it can
    // never be mistaken for a request layout.
    const std::vector<std::uint8_t> bytes{0, 7, 0, 0, 0, 7, 1, 0x03, 0x04, 0x00, 0x0A, 0x00, 0x0B};
    const auto frame = decode_frame(bytes, Direction::response);
    EXPECT_EQ(std::get<RawPdu>(frame.pdu.body).body, (std::vector<std::uint8_t>{4, 0, 10, 0, 11}));
    EXPECT_EQ(encode_frame(frame), bytes);
}

TEST(ModbusCodec, SameBytesDecodeByDirection) {
    const std::vector<std::uint8_t> bytes{0, 7, 0, 0, 0, 6, 1, 0x03, 0x00, 0x00, 0x00, 0x0A};
    EXPECT_TRUE(std::holds_alternative<ReadHoldingRegisters>(decode_frame(bytes, Direction::request).pdu.body));
    EXPECT_TRUE(std::holds_alternative<RawPdu>(decode_frame(bytes, Direction::response).pdu.body));
}

TEST(ModbusCodec, EncodingEnforcesInvariants) {
    auto expect_encoding_error = [](Frame frame) {
        try {
            encode_frame(frame);
            ADD_FAILURE() << "encode succeeded";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::encoding);
        }
    };
    expect_encoding_error({{1, 0, 0, 1}, {0x05, WriteSingleCoil{0, 0x1234}}, Direction::request});
    expect_encoding_error({{1, 0, 0, 1}, {0x06, WriteSingleCoil{0, coil_on}}, Direction::request});
    expect_encoding_error({{1, 7, 0, 1}, {0x06, WriteSingleRegister{0, 1}}, Direction::request});
    expect_encoding_error({{1, 0, 0, 1}, {0x05, RawPdu{{0, 0, 0xFF, 0}}}, Direction::request});
    expect_encoding_error({{1, 0, 0, 1}, {0x01, ReadCoils{0, 8}}, Direction::response});
    expect_encoding_error({{1, 0, 0, 1}, {0x2B, ReadDeviceIdentification{0x0D, 1, 0}}, Direction::request});
}

TEST(ModbusCodec, DecodesConcatenatedFrames) {
    auto a = encode_frame(make_frame(1, 1, {0x06, WriteSingleRegister{1, 2}}));
    const auto b = encode_frame(make_frame(2, 1, {0x11, ReportServerId{}}));
    a.insert(a.end(), b.begin(), b.end());
    const auto frames = decode_frames(a, Direction::request);
    ASSERT_EQ(frames.size(), 2u);
    EXPECT_EQ(frames[0].header.transaction_id, 1);
    EXPECT_EQ(frames[1].pdu.function_code, 0x11);
    a.push_back(0);
    EXPECT_THROW(decode_frames(a, Direction::request), Error);
}

TEST(ModbusCodec, ClassifiesPdus) {
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x06, WriteSingleRegister{}})), PduKind::write);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x05, WriteSingleCoil{}})), PduKind::write);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x03, ReadHoldingRegisters{}})), PduKind::read);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x2B, ReadDeviceIdentification{}})), PduKind::identification);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x2B, RawPdu{{0x0E, 1, 1, 0}}}, Direction::response)),
              PduKind::identification);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x2B, RawPdu{{0x0D, 1}}})), PduKind::other);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x85, ExceptionResponse{0x05, 2}})), PduKind::exception);
    EXPECT_EQ(classify_pdu(make_frame(1, 1, {0x10, RawPdu{{0, 0, 0, 1, 2, 0, 0}}})), PduKind::other);
}

TEST(ModbusCodec, RandomFramesRoundTrip) {
    testkit::Rng rng(1234);
    for (int i = 0; i < 1000; ++i) {
        const auto frame = testkit::random_frame(rng);
        const auto bytes = encode_frame(frame);
        ASSERT_EQ(decode_frame(bytes, frame.direction), frame) << "iteration " << i;
    }
}

TEST(ModbusCodec, FuzzedInputOnlyRaisesErrors) {
    testkit::Rng rng(99);
    for (int i = 0; i < 20000; ++i) {
        const auto bytes = testkit::fuzz_bytes(rng);
        try {
            const auto frames = decode_frames(bytes, Direction::unknown);
            for (const auto& f : frames) EXPECT_EQ(encode_frame(f).size(), f.header.length + 6u);
        } catch (const Error&) {
        }
    }
}
