//! EMV data objects and APDU envelopes.
//!
//! Each object carries a structured view (named bits, typed fields) and a
//! deterministic symbolic [`Term`] view. The term view is what flows into
//! cryptogram inputs and the attacker's knowledge; the structured view is
//! what attack scripts flip bits on. Both must stay in lockstep, which is
//! why every `to_term` has a matching `from_term`.

use serde::Serialize;
use thiserror::Error;

use crate::term::{parse_term, Term};

// ---------------------------------------------------------------------------
// Status trailers
// ---------------------------------------------------------------------------

/// Two-byte response status word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Trailer(pub u16);

impl Trailer {
    pub const SUCCESS: Trailer = Trailer(0x9000);
    pub const PIN_BLOCKED: Trailer = Trailer(0x6983);
    /// Command out of phase or otherwise not allowed.
    pub const NOT_ALLOWED: Trailer = Trailer(0x6985);

    pub fn pin_fail(tries_left: u8) -> Trailer {
        assert!(tries_left <= 9, "pin try counter is a single digit");
        Trailer(0x63C0 + tries_left as u16)
    }

    pub fn is_success(self) -> bool {
        self.0 == 0x9000
    }

    pub fn is_pin_fail(self) -> bool {
        (0x63C0..=0x63C9).contains(&self.0)
    }

    pub fn is_pin_blocked(self) -> bool {
        self.0 == 0x6983
    }

    pub fn is_valid(self) -> bool {
        self.is_success() || self.is_pin_fail() || self.is_pin_blocked() || self.0 == 0x6985
    }

    pub fn as_hex(self) -> String {
        format!("{:04X}", self.0)
    }

    pub fn to_term(self) -> Term {
        Term::atom(&format!("sw.{:04x}", self.0))
    }
}

// ---------------------------------------------------------------------------
// Bit-addressed qualifiers
// ---------------------------------------------------------------------------

/// Byte/bit addressing shared by the qualifier objects. Bytes are indexed
/// from 1; bits follow the b8..b1 convention where bit 8 is the most
/// significant.
pub trait QualifierBits: Sized + Copy {
    fn byte(&self, index: u8) -> u8;
    fn with_byte(&self, index: u8, value: u8) -> Self;

    fn get_bit(&self, byte_index: u8, bit_index: u8) -> bool {
        assert!((1..=8).contains(&bit_index), "bit index out of range");
        self.byte(byte_index) & (1 << (bit_index - 1)) != 0
    }

    fn set_bit(&self, byte_index: u8, bit_index: u8, value: bool) -> Self {
        assert!((1..=8).contains(&bit_index), "bit index out of range");
        let mask = 1u8 << (bit_index - 1);
        let b = self.byte(byte_index);
        self.with_byte(byte_index, if value { b | mask } else { b & !mask })
    }
}

/// Terminal Transaction Qualifiers (contactless command side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Ttq {
    pub byte1: u8,
    pub byte2: u8,
}

impl Ttq {
    pub const DDA_REQUESTED: (u8, u8) = (1, 1);
    pub const CVM_REQUIRED: (u8, u8) = (2, 7);
    pub const ONLINE_CRYPTOGRAM_REQUIRED: (u8, u8) = (2, 8);

    pub fn dda_requested(&self) -> bool {
        self.get_bit(1, 1)
    }

    pub fn cvm_required(&self) -> bool {
        self.get_bit(2, 7)
    }

    pub fn online_cryptogram_required(&self) -> bool {
        self.get_bit(2, 8)
    }

    pub fn to_term(self) -> Term {
        Term::atom(&format!("ttq.{:02x}{:02x}", self.byte1, self.byte2))
    }

    pub fn from_term(t: &Term) -> Option<Ttq> {
        let (b1, b2) = parse_hex_pair(t, "ttq.")?;
        Some(Ttq { byte1: b1, byte2: b2 })
    }
}

impl QualifierBits for Ttq {
    fn byte(&self, index: u8) -> u8 {
        match index {
            1 => self.byte1,
            2 => self.byte2,
            _ => panic!("byte index out of range"),
        }
    }

    fn with_byte(&self, index: u8, value: u8) -> Self {
        let mut out = *self;
        match index {
            1 => out.byte1 = value,
            2 => out.byte2 = value,
            _ => panic!("byte index out of range"),
        }
        out
    }
}

/// Card Transaction Qualifiers (contactless response side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
pub struct Ctq {
    pub byte1: u8,
    pub byte2: u8,
}

impl Ctq {
    pub const ONLINE_PIN_REQUIRED: (u8, u8) = (1, 8);
    pub const CDCVM_PERFORMED: (u8, u8) = (2, 8);

    pub fn online_pin_required(&self) -> bool {
        self.get_bit(1, 8)
    }

    pub fn cdcvm_performed(&self) -> bool {
        self.get_bit(2, 8)
    }

    pub fn to_term(self) -> Term {
        Term::atom(&format!("ctq.{:02x}{:02x}", self.byte1, self.byte2))
    }

    pub fn from_term(t: &Term) -> Option<Ctq> {
        let (b1, b2) = parse_hex_pair(t, "ctq.")?;
        Some(Ctq { byte1: b1, byte2: b2 })
    }
}

impl QualifierBits for Ctq {
    fn byte(&self, index: u8) -> u8 {
        match index {
            1 => self.byte1,
            2 => self.byte2,
            _ => panic!("byte index out of range"),
        }
    }

    fn with_byte(&self, index: u8, value: u8) -> Self {
        let mut out = *self;
        match index {
            1 => out.byte1 = value,
            2 => out.byte2 = value,
            _ => panic!("byte index out of range"),
        }
        out
    }
}

fn parse_hex_pair(t: &Term, prefix: &str) -> Option<(u8, u8)> {
    let Term::Atom(a) = t else { return None };
    let hex = a.name.strip_prefix(prefix)?;
    if hex.len() != 4 {
        return None;
    }
    let b1 = u8::from_str_radix(&hex[0..2], 16).ok()?;
    let b2 = u8::from_str_radix(&hex[2..4], 16).ok()?;
    Some((b1, b2))
}

/// Offline data authentication profile announced by the card.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AuthProfile {
    Sda,
    Dda,
    Cda,
    /// Visa contactless without offline data authentication.
    EmvMode,
}

impl AuthProfile {
    pub fn label(self) -> &'static str {
        match self {
            AuthProfile::Sda => "sda",
            AuthProfile::Dda => "dda",
            AuthProfile::Cda => "cda",
            AuthProfile::EmvMode => "emv",
        }
    }

    fn from_label(s: &str) -> Option<AuthProfile> {
        Some(match s {
            "sda" => AuthProfile::Sda,
            "dda" => AuthProfile::Dda,
            "cda" => AuthProfile::Cda,
            "emv" => AuthProfile::EmvMode,
            _ => return None,
        })
    }
}

/// Application Interchange Profile.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Aip {
    pub byte1: u8,
    pub profile: AuthProfile,
    pub extra: Term,
}

impl Aip {
    pub const CDCVM_SUPPORTED: (u8, u8) = (1, 2);

    pub fn new(profile: AuthProfile) -> Aip {
        Aip { byte1: 0, profile, extra: Term::atom("aip_data") }
    }

    pub fn cdcvm_supported(&self) -> bool {
        self.get_bit(1, 2)
    }

    pub fn to_term(&self) -> Term {
        Term::tuple(vec![
            Term::atom("aip"),
            Term::atom(self.profile.label()),
            Term::atom(&format!("aipb.{:02x}", self.byte1)),
            self.extra.clone(),
        ])
    }

    pub fn from_term(t: &Term) -> Option<Aip> {
        let items = tagged(t, "aip", 4)?;
        let Term::Atom(profile) = &items[1] else { return None };
        let Term::Atom(bits) = &items[2] else { return None };
        let byte1 = u8::from_str_radix(bits.name.strip_prefix("aipb.")?, 16).ok()?;
        Some(Aip {
            byte1,
            profile: AuthProfile::from_label(&profile.name)?,
            extra: items[3].clone(),
        })
    }
}

impl QualifierBits for Aip {
    fn byte(&self, index: u8) -> u8 {
        match index {
            1 => self.byte1,
            _ => panic!("byte index out of range"),
        }
    }

    fn with_byte(&self, index: u8, value: u8) -> Self {
        assert_eq!(index, 1, "byte index out of range");
        let mut out = self.clone();
        out.byte1 = value;
        out
    }
}

// ---------------------------------------------------------------------------
// Cardholder verification methods
// ---------------------------------------------------------------------------

/// A cardholder verification method label, used both in the card's method
/// list and as the per-party record of the method believed used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum CvmKind {
    NoPin,
    PlainPin,
    EncPin,
    OnlinePin,
    Cdcvm,
    Signature,
}

impl CvmKind {
    pub fn label(self) -> &'static str {
        match self {
            CvmKind::NoPin => "no_pin",
            CvmKind::PlainPin => "plain_pin",
            CvmKind::EncPin => "enc_pin",
            CvmKind::OnlinePin => "online_pin",
            CvmKind::Cdcvm => "cdcvm",
            CvmKind::Signature => "signature",
        }
    }

    pub fn from_label(s: &str) -> Option<CvmKind> {
        Some(match s {
            "no_pin" => CvmKind::NoPin,
            "plain_pin" => CvmKind::PlainPin,
            "enc_pin" => CvmKind::EncPin,
            "online_pin" => CvmKind::OnlinePin,
            "cdcvm" => CvmKind::Cdcvm,
            "signature" => CvmKind::Signature,
            _ => return None,
        })
    }

    pub fn to_term(self) -> Term {
        Term::atom(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CvmCondition {
    Always,
    AboveLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CvmEntry {
    pub method: CvmKind,
    pub condition: CvmCondition,
}

/// Ordered list of the methods a card supports.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct CvmList {
    pub entries: Vec<CvmEntry>,
}

impl CvmList {
    pub fn always(methods: &[CvmKind]) -> CvmList {
        CvmList {
            entries: methods
                .iter()
                .map(|&method| CvmEntry { method, condition: CvmCondition::Always })
                .collect(),
        }
    }

    pub fn to_term(&self) -> Term {
        let mut items = vec![Term::atom("cvms")];
        for e in &self.entries {
            let name = match e.condition {
                CvmCondition::Always => e.method.label().to_string(),
                CvmCondition::AboveLimit => format!("{}.hi", e.method.label()),
            };
            items.push(Term::atom(&name));
        }
        Term::Tuple(items)
    }

    pub fn from_term(t: &Term) -> Option<CvmList> {
        let Term::Tuple(items) = t else { return None };
        if items.first() != Some(&Term::atom("cvms")) {
            return None;
        }
        let mut entries = Vec::new();
        for it in &items[1..] {
            let Term::Atom(a) = it else { return None };
            let (label, condition) = match a.name.strip_suffix(".hi") {
                Some(base) => (base, CvmCondition::AboveLimit),
                None => (a.name.as_str(), CvmCondition::Always),
            };
            entries.push(CvmEntry { method: CvmKind::from_label(label)?, condition });
        }
        Some(CvmList { entries })
    }
}

// ---------------------------------------------------------------------------
// Transaction data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ValueClass {
    Low,
    High,
}

impl ValueClass {
    pub fn label(self) -> &'static str {
        match self {
            ValueClass::Low => "low",
            ValueClass::High => "high",
        }
    }
}

/// Transaction amount: a value class driving CVM/authorization policy plus
/// an opaque numeric tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Amount {
    pub class: ValueClass,
    pub tag: Term,
}

impl Amount {
    pub fn new(class: ValueClass) -> Amount {
        Amount { class, tag: Term::atom("amt") }
    }

    pub fn to_term(&self) -> Term {
        Term::tuple(vec![Term::atom("amount"), Term::atom(self.class.label()), self.tag.clone()])
    }

    pub fn from_term(t: &Term) -> Option<Amount> {
        let items = tagged(t, "amount", 3)?;
        let Term::Atom(c) = &items[1] else { return None };
        let class = match c.name.as_str() {
            "low" => ValueClass::Low,
            "high" => ValueClass::High,
            _ => return None,
        };
        Some(Amount { class, tag: items[2].clone() })
    }
}

/// Terminal-sourced transaction data requested by the card before the
/// first cryptogram.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Pdol {
    /// Present on the Visa contactless interface only.
    pub ttq: Option<Ttq>,
    pub amount: Amount,
    pub country: Term,
    pub currency: Term,
    pub date: Term,
    pub tx_type: Term,
    /// Terminal nonce, fresh per transaction.
    pub un: Term,
}

impl Pdol {
    pub fn to_term(&self) -> Term {
        Term::tuple(vec![
            Term::atom("pdol"),
            opt_term(self.ttq.map(Ttq::to_term)),
            self.amount.to_term(),
            self.country.clone(),
            self.currency.clone(),
            self.date.clone(),
            self.tx_type.clone(),
            self.un.clone(),
        ])
    }

    pub fn from_term(t: &Term) -> Option<Pdol> {
        let items = tagged(t, "pdol", 8)?;
        let ttq = match opt_from_term(&items[1])? {
            Some(tt) => Some(Ttq::from_term(&tt)?),
            None => None,
        };
        Some(Pdol {
            ttq,
            amount: Amount::from_term(&items[2])?,
            country: items[3].clone(),
            currency: items[4].clone(),
            date: items[5].clone(),
            tx_type: items[6].clone(),
            un: items[7].clone(),
        })
    }
}

/// Cryptogram type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AcKind {
    /// Offline approval.
    Tc,
    /// Online authorization request.
    Arqc,
    /// Decline.
    Aac,
}

impl AcKind {
    pub fn label(self) -> &'static str {
        match self {
            AcKind::Tc => "tc",
            AcKind::Arqc => "arqc",
            AcKind::Aac => "aac",
        }
    }

    pub fn from_label(s: &str) -> Option<AcKind> {
        Some(match s {
            "tc" => AcKind::Tc,
            "arqc" => AcKind::Arqc,
            "aac" => AcKind::Aac,
            _ => return None,
        })
    }

    pub fn to_term(self) -> Term {
        Term::atom(self.label())
    }
}

/// First cryptogram data-object list: the transaction data, the terminal's
/// view of the CVM performed, the requested cryptogram type, and whether the
/// response signature must bind the cryptogram.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Cdol1 {
    pub pdol: Pdol,
    /// Terminal's CVM results, echoed to the card.
    pub cvmr: CvmKind,
    pub requested: AcKind,
    pub cda_requested: bool,
}

impl Cdol1 {
    pub fn to_term(&self) -> Term {
        Term::tuple(vec![
            Term::atom("cdol"),
            self.pdol.to_term(),
            self.cvmr.to_term(),
            self.requested.to_term(),
            Term::atom(if self.cda_requested { "cda_req" } else { "no_cda" }),
        ])
    }

    pub fn from_term(t: &Term) -> Option<Cdol1> {
        let items = tagged(t, "cdol", 5)?;
        let Term::Atom(cvmr) = &items[2] else { return None };
        let Term::Atom(req) = &items[3] else { return None };
        let Term::Atom(cda) = &items[4] else { return None };
        Some(Cdol1 {
            pdol: Pdol::from_term(&items[1])?,
            cvmr: CvmKind::from_label(&cvmr.name)?,
            requested: AcKind::from_label(&req.name)?,
            cda_requested: match cda.name.as_str() {
                "cda_req" => true,
                "no_cda" => false,
                _ => return None,
            },
        })
    }
}

/// The seven-element transaction view each party commits to. Field order is
/// fixed; agreement checks are structural equality over the whole record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TransactionRecord {
    pub pan: Term,
    pub aip: Aip,
    pub cvm: CvmKind,
    /// The cryptogram input data (the first data-object list contents).
    pub ac_input: Term,
    pub atc: u16,
    pub ac: Term,
    pub iad: Term,
}

impl TransactionRecord {
    pub fn to_term(&self) -> Term {
        Term::tuple(vec![
            self.pan.clone(),
            self.aip.to_term(),
            self.cvm.to_term(),
            self.ac_input.clone(),
            atc_term(self.atc),
            self.ac.clone(),
            self.iad.clone(),
        ])
    }

    /// Which of the seven fields differ between two views.
    pub fn diff_fields(&self, other: &TransactionRecord) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.pan != other.pan {
            out.push("pan");
        }
        if self.aip != other.aip {
            out.push("aip");
        }
        if self.cvm != other.cvm {
            out.push("cvm");
        }
        if self.ac_input != other.ac_input {
            out.push("ac_input");
        }
        if self.atc != other.atc {
            out.push("atc");
        }
        if self.ac != other.ac {
            out.push("ac");
        }
        if self.iad != other.iad {
            out.push("iad");
        }
        out
    }
}

pub fn atc_term(atc: u16) -> Term {
    Term::atom(&format!("atc.{atc}"))
}

pub fn atc_from_term(t: &Term) -> Option<u16> {
    let Term::Atom(a) = t else { return None };
    a.name.strip_prefix("atc.")?.parse().ok()
}

// ---------------------------------------------------------------------------
// APDUs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Command,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ApduName {
    Select,
    GetProcessingOptions,
    ReadRecord,
    InternalAuthenticate,
    GetChallenge,
    Verify,
    GenerateAc,
    ExternalAuthenticate,
}

impl ApduName {
    pub fn as_str(self) -> &'static str {
        match self {
            ApduName::Select => "SELECT",
            ApduName::GetProcessingOptions => "GET_PROCESSING_OPTIONS",
            ApduName::ReadRecord => "READ_RECORD",
            ApduName::InternalAuthenticate => "INTERNAL_AUTHENTICATE",
            ApduName::GetChallenge => "GET_CHALLENGE",
            ApduName::Verify => "VERIFY",
            ApduName::GenerateAc => "GENERATE_AC",
            ApduName::ExternalAuthenticate => "EXTERNAL_AUTHENTICATE",
        }
    }

    fn from_str(s: &str) -> Option<ApduName> {
        Some(match s {
            "SELECT" => ApduName::Select,
            "GET_PROCESSING_OPTIONS" => ApduName::GetProcessingOptions,
            "READ_RECORD" => ApduName::ReadRecord,
            "INTERNAL_AUTHENTICATE" => ApduName::InternalAuthenticate,
            "GET_CHALLENGE" => ApduName::GetChallenge,
            "VERIFY" => ApduName::Verify,
            "GENERATE_AC" => ApduName::GenerateAc,
            "EXTERNAL_AUTHENTICATE" => ApduName::ExternalAuthenticate,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum VerifyPayload {
    Plain { pin: Term },
    Enciphered { cipher: Term },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum CommandBody {
    Select { aid: Term },
    Gpo { pdol: Pdol },
    ReadRecord,
    InternalAuthenticate { un: Term },
    GetChallenge,
    Verify { payload: VerifyPayload },
    GenerateAc { cdol: Cdol1 },
    /// Delivers the issuer decision and requests the final cryptogram.
    ExternalAuthenticate { arc: Term, arpc: Term },
}

/// Offline-data-authentication records delivered by READ RECORD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum OdaRecords {
    /// No signature capability (Visa without offline data authentication).
    None,
    /// Static signed data plus the issuer certificate that validates it.
    Sda { cert_bank: Term, ssad: Term },
    /// Full two-level PKI chain.
    Pki { cert_bank: Term, cert_card: Term },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ResponseBody {
    SelectOk { aid: Term },
    GpoContact { aip: Aip, afl: Term },
    /// Single-response Visa path: processing options and cryptogram together.
    GpoVisa {
        aip: Aip,
        afl: Term,
        atc: u16,
        cid: AcKind,
        ac: Term,
        ctq: Ctq,
        iad: Term,
        nc: Option<Term>,
        sdad: Option<Term>,
    },
    Records { pan: Term, expiry: Term, cvm_list: CvmList, oda: OdaRecords },
    DynamicSignature { nc: Term, sdad: Term },
    Challenge { nonce: Term },
    /// Bare status word (VERIFY outcomes, rejections).
    Status,
    GeneratedAc { cid: AcKind, atc: u16, ac: Option<Term>, sdad: Option<Term>, nc: Option<Term>, iad: Term },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ApduBody {
    Command(CommandBody),
    Response(ResponseBody),
}

/// One APDU: a structured body plus, for responses, the status trailer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Apdu {
    pub name: ApduName,
    pub body: ApduBody,
    pub trailer: Option<Trailer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApduError {
    #[error("malformed apdu: {0}")]
    Malformed(String),
}

impl Apdu {
    pub fn command(name: ApduName, body: CommandBody) -> Apdu {
        Apdu { name, body: ApduBody::Command(body), trailer: None }
    }

    pub fn response(name: ApduName, body: ResponseBody, trailer: Trailer) -> Apdu {
        debug_assert!(trailer.is_valid());
        Apdu { name, body: ApduBody::Response(body), trailer: Some(trailer) }
    }

    /// Bare status response.
    pub fn status(name: ApduName, trailer: Trailer) -> Apdu {
        Apdu::response(name, ResponseBody::Status, trailer)
    }

    pub fn direction(&self) -> Direction {
        match self.body {
            ApduBody::Command(_) => Direction::Command,
            ApduBody::Response(_) => Direction::Response,
        }
    }

    /// The symbolic payload, as observed on the wire.
    pub fn payload_term(&self) -> Term {
        match &self.body {
            ApduBody::Command(c) => command_to_term(c),
            ApduBody::Response(r) => response_to_term(r),
        }
    }

    /// Canonical one-line wire dump: direction marker, name, payload
    /// s-expression, and trailer hex for responses.
    pub fn encode(&self) -> String {
        match self.direction() {
            Direction::Command => format!("> {} {}", self.name.as_str(), self.payload_term()),
            Direction::Response => format!(
                "< {} {} {}",
                self.name.as_str(),
                self.payload_term(),
                self.trailer.expect("responses carry a trailer").as_hex()
            ),
        }
    }

    pub fn decode(line: &str) -> Result<Apdu, ApduError> {
        let malformed = |why: &str| ApduError::Malformed(why.to_string());
        let mut rest = line.trim();
        let direction = match rest.chars().next() {
            Some('>') => Direction::Command,
            Some('<') => Direction::Response,
            _ => return Err(malformed("missing direction marker")),
        };
        rest = rest[1..].trim_start();
        let name_end = rest.find(' ').ok_or_else(|| malformed("missing payload"))?;
        let name = ApduName::from_str(&rest[..name_end]).ok_or_else(|| malformed("unknown name"))?;
        rest = rest[name_end..].trim_start();

        let (payload_str, trailer) = match direction {
            Direction::Command => (rest, None),
            Direction::Response => {
                let cut = rest.rfind(' ').ok_or_else(|| malformed("missing trailer"))?;
                let word = u16::from_str_radix(&rest[cut + 1..], 16)
                    .map_err(|_| malformed("bad trailer"))?;
                let t = Trailer(word);
                if !t.is_valid() {
                    return Err(malformed("trailer outside the allowed set"));
                }
                (&rest[..cut], Some(t))
            }
        };
        let payload =
            parse_term(payload_str).map_err(|e| malformed(&format!("payload: {e}")))?;
        let body = match direction {
            Direction::Command => ApduBody::Command(
                command_from_term(&payload).ok_or_else(|| malformed("bad command payload"))?,
            ),
            Direction::Response => ApduBody::Response(
                response_from_term(&payload).ok_or_else(|| malformed("bad response payload"))?,
            ),
        };
        let apdu = Apdu { name, body, trailer };
        if apdu.name_of_body() != name {
            return Err(malformed("name does not match payload"));
        }
        Ok(apdu)
    }

    fn name_of_body(&self) -> ApduName {
        match &self.body {
            ApduBody::Command(c) => match c {
                CommandBody::Select { .. } => ApduName::Select,
                CommandBody::Gpo { .. } => ApduName::GetProcessingOptions,
                CommandBody::ReadRecord => ApduName::ReadRecord,
                CommandBody::InternalAuthenticate { .. } => ApduName::InternalAuthenticate,
                CommandBody::GetChallenge => ApduName::GetChallenge,
                CommandBody::Verify { .. } => ApduName::Verify,
                CommandBody::GenerateAc { .. } => ApduName::GenerateAc,
                CommandBody::ExternalAuthenticate { .. } => ApduName::ExternalAuthenticate,
            },
            // response bodies are name-agnostic (Status fits several commands)
            ApduBody::Response(_) => self.name,
        }
    }
}

fn opt_term(t: Option<Term>) -> Term {
    match t {
        None => Term::tuple(vec![Term::atom("none")]),
        Some(v) => Term::tuple(vec![Term::atom("some"), v]),
    }
}

fn opt_from_term(t: &Term) -> Option<Option<Term>> {
    let Term::Tuple(items) = t else { return None };
    match items.as_slice() {
        [tag] if *tag == Term::atom("none") => Some(None),
        [tag, v] if *tag == Term::atom("some") => Some(Some(v.clone())),
        _ => None,
    }
}

fn tagged<'a>(t: &'a Term, tag: &str, arity: usize) -> Option<&'a [Term]> {
    let Term::Tuple(items) = t else { return None };
    if items.len() == arity && items[0] == Term::atom(tag) {
        Some(items.as_slice())
    } else {
        None
    }
}

fn command_to_term(c: &CommandBody) -> Term {
    match c {
        CommandBody::Select { aid } => Term::tuple(vec![Term::atom("select"), aid.clone()]),
        CommandBody::Gpo { pdol } => Term::tuple(vec![Term::atom("gpo"), pdol.to_term()]),
        CommandBody::ReadRecord => Term::tuple(vec![Term::atom("read_record")]),
        CommandBody::InternalAuthenticate { un } => {
            Term::tuple(vec![Term::atom("int_auth"), un.clone()])
        }
        CommandBody::GetChallenge => Term::tuple(vec![Term::atom("get_challenge")]),
        CommandBody::Verify { payload } => match payload {
            VerifyPayload::Plain { pin } => {
                Term::tuple(vec![Term::atom("verify"), Term::atom("plain"), pin.clone()])
            }
            VerifyPayload::Enciphered { cipher } => {
                Term::tuple(vec![Term::atom("verify"), Term::atom("enc"), cipher.clone()])
            }
        },
        CommandBody::GenerateAc { cdol } => {
            Term::tuple(vec![Term::atom("gen_ac"), cdol.to_term()])
        }
        CommandBody::ExternalAuthenticate { arc, arpc } => {
            Term::tuple(vec![Term::atom("ext_auth"), arc.clone(), arpc.clone()])
        }
    }
}

fn command_from_term(t: &Term) -> Option<CommandBody> {
    let Term::Tuple(items) = t else { return None };
    let Some(Term::Atom(tag)) = items.first() else { return None };
    match (tag.name.as_str(), items.len()) {
        ("select", 2) => Some(CommandBody::Select { aid: items[1].clone() }),
        ("gpo", 2) => Some(CommandBody::Gpo { pdol: Pdol::from_term(&items[1])? }),
        ("read_record", 1) => Some(CommandBody::ReadRecord),
        ("int_auth", 2) => Some(CommandBody::InternalAuthenticate { un: items[1].clone() }),
        ("get_challenge", 1) => Some(CommandBody::GetChallenge),
        ("verify", 3) => {
            let Term::Atom(kind) = &items[1] else { return None };
            let payload = match kind.name.as_str() {
                "plain" => VerifyPayload::Plain { pin: items[2].clone() },
                "enc" => VerifyPayload::Enciphered { cipher: items[2].clone() },
                _ => return None,
            };
            Some(CommandBody::Verify { payload })
        }
        ("gen_ac", 2) => Some(CommandBody::GenerateAc { cdol: Cdol1::from_term(&items[1])? }),
        ("ext_auth", 3) => Some(CommandBody::ExternalAuthenticate {
            arc: items[1].clone(),
            arpc: items[2].clone(),
        }),
        _ => None,
    }
}

fn oda_to_term(o: &OdaRecords) -> Term {
    match o {
        OdaRecords::None => Term::tuple(vec![Term::atom("oda_none")]),
        OdaRecords::Sda { cert_bank, ssad } => {
            Term::tuple(vec![Term::atom("oda_sda"), cert_bank.clone(), ssad.clone()])
        }
        OdaRecords::Pki { cert_bank, cert_card } => {
            Term::tuple(vec![Term::atom("oda_pki"), cert_bank.clone(), cert_card.clone()])
        }
    }
}

fn oda_from_term(t: &Term) -> Option<OdaRecords> {
    let Term::Tuple(items) = t else { return None };
    let Some(Term::Atom(tag)) = items.first() else { return None };
    match (tag.name.as_str(), items.len()) {
        ("oda_none", 1) => Some(OdaRecords::None),
        ("oda_sda", 3) => {
            Some(OdaRecords::Sda { cert_bank: items[1].clone(), ssad: items[2].clone() })
        }
        ("oda_pki", 3) => {
            Some(OdaRecords::Pki { cert_bank: items[1].clone(), cert_card: items[2].clone() })
        }
        _ => None,
    }
}

fn response_to_term(r: &ResponseBody) -> Term {
    match r {
        ResponseBody::SelectOk { aid } => Term::tuple(vec![Term::atom("fci"), aid.clone()]),
        ResponseBody::GpoContact { aip, afl } => {
            Term::tuple(vec![Term::atom("gpo_resp"), aip.to_term(), afl.clone()])
        }
        ResponseBody::GpoVisa { aip, afl, atc, cid, ac, ctq, iad, nc, sdad } => Term::tuple(vec![
            Term::atom("gpo_visa"),
            aip.to_term(),
            afl.clone(),
            atc_term(*atc),
            cid.to_term(),
            ac.clone(),
            ctq.to_term(),
            iad.clone(),
            opt_term(nc.clone()),
            opt_term(sdad.clone()),
        ]),
        ResponseBody::Records { pan, expiry, cvm_list, oda } => Term::tuple(vec![
            Term::atom("records"),
            pan.clone(),
            expiry.clone(),
            cvm_list.to_term(),
            oda_to_term(oda),
        ]),
        ResponseBody::DynamicSignature { nc, sdad } => {
            Term::tuple(vec![Term::atom("sdad_resp"), nc.clone(), sdad.clone()])
        }
        ResponseBody::Challenge { nonce } => {
            Term::tuple(vec![Term::atom("challenge"), nonce.clone()])
        }
        ResponseBody::Status => Term::tuple(vec![Term::atom("status")]),
        ResponseBody::GeneratedAc { cid, atc, ac, sdad, nc, iad } => Term::tuple(vec![
            Term::atom("ac_resp"),
            cid.to_term(),
            atc_term(*atc),
            opt_term(ac.clone()),
            opt_term(sdad.clone()),
            opt_term(nc.clone()),
            iad.clone(),
        ]),
    }
}

fn response_from_term(t: &Term) -> Option<ResponseBody> {
    let Term::Tuple(items) = t else { return None };
    let Some(Term::Atom(tag)) = items.first() else { return None };
    match (tag.name.as_str(), items.len()) {
        ("fci", 2) => Some(ResponseBody::SelectOk { aid: items[1].clone() }),
        ("gpo_resp", 3) => Some(ResponseBody::GpoContact {
            aip: Aip::from_term(&items[1])?,
            afl: items[2].clone(),
        }),
        ("gpo_visa", 10) => {
            let Term::Atom(cid) = &items[4] else { return None };
            Some(ResponseBody::GpoVisa {
                aip: Aip::from_term(&items[1])?,
                afl: items[2].clone(),
                atc: atc_from_term(&items[3])?,
                cid: AcKind::from_label(&cid.name)?,
                ac: items[5].clone(),
                ctq: Ctq::from_term(&items[6])?,
                iad: items[7].clone(),
                nc: opt_from_term(&items[8])?,
                sdad: opt_from_term(&items[9])?,
            })
        }
        ("records", 5) => Some(ResponseBody::Records {
            pan: items[1].clone(),
            expiry: items[2].clone(),
            cvm_list: CvmList::from_term(&items[3])?,
            oda: oda_from_term(&items[4])?,
        }),
        ("sdad_resp", 3) => {
            Some(ResponseBody::DynamicSignature { nc: items[1].clone(), sdad: items[2].clone() })
        }
        ("challenge", 2) => Some(ResponseBody::Challenge { nonce: items[1].clone() }),
        ("status", 1) => Some(ResponseBody::Status),
        ("ac_resp", 7) => {
            let Term::Atom(cid) = &items[1] else { return None };
            Some(ResponseBody::GeneratedAc {
                cid: AcKind::from_label(&cid.name)?,
                atc: atc_from_term(&items[2])?,
                ac: opt_from_term(&items[3])?,
                sdad: opt_from_term(&items[4])?,
                nc: opt_from_term(&items[5])?,
                iad: items[6].clone(),
            })
        }
        _ => None,
    }
}

pub const CONTACT_AID: &str = "1PAY.SYS.DDF01";
pub const CONTACTLESS_AID: &str = "2PAY.SYS.DDF01";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::AtomGen;

    #[test]
    fn ctq_clear_bit8_byte1() {
        let ctq = Ctq { byte1: 0b1000_0000, byte2: 0 };
        let out = ctq.set_bit(1, 8, false);
        assert_eq!(out, Ctq { byte1: 0, byte2: 0 });
    }

    #[test]
    fn ctq_set_bit8_byte2() {
        let ctq = Ctq { byte1: 0, byte2: 0 };
        let out = ctq.set_bit(2, 8, true);
        assert_eq!(out, Ctq { byte1: 0, byte2: 0b1000_0000 });
    }

    #[test]
    fn set_bit_to_current_value_is_identity() {
        let ttq = Ttq { byte1: 0x21, byte2: 0xC0 };
        for byte in 1..=2 {
            for bit in 1..=8 {
                let v = ttq.get_bit(byte, bit);
                assert_eq!(ttq.set_bit(byte, bit, v), ttq);
            }
        }
    }

    #[test]
    fn set_bit_touches_exactly_one_bit() {
        let ttq = Ttq { byte1: 0x5A, byte2: 0xA5 };
        for byte in 1..=2u8 {
            for bit in 1..=8u8 {
                for v in [false, true] {
                    let out = ttq.set_bit(byte, bit, v);
                    let popcount = (out.byte1 ^ ttq.byte1).count_ones()
                        + (out.byte2 ^ ttq.byte2).count_ones();
                    assert!(popcount <= 1, "flipped {popcount} bits");
                }
            }
        }
    }

    #[test]
    fn trailer_classification() {
        assert!(Trailer(0x9000).is_success());
        for x in 0..=9u16 {
            assert!(Trailer(0x63C0 + x).is_pin_fail());
        }
        assert!(Trailer(0x6983).is_pin_blocked());
        assert!(!Trailer(0x9000).is_pin_fail());
        assert!(!Trailer(0x63C1).is_success());
    }

    #[test]
    fn select_roundtrip() {
        let cmd = Apdu::command(
            ApduName::Select,
            CommandBody::Select { aid: Term::atom(CONTACTLESS_AID) },
        );
        let line = cmd.encode();
        assert_eq!(Apdu::decode(&line).unwrap(), cmd);
    }

    #[test]
    fn verify_blocked_response_keeps_trailer() {
        let resp = Apdu::status(ApduName::Verify, Trailer::PIN_BLOCKED);
        let decoded = Apdu::decode(&resp.encode()).unwrap();
        assert_eq!(decoded.trailer, Some(Trailer(0x6983)));
    }

    #[test]
    fn decode_rejects_junk() {
        assert!(Apdu::decode("").is_err());
        assert!(Apdu::decode("VERIFY (tuple status)").is_err());
        assert!(Apdu::decode("> NOPE (tuple select a)").is_err());
        assert!(Apdu::decode("< VERIFY (tuple status) ZZZZ").is_err());
        // trailer outside the allowed status set
        assert!(Apdu::decode("< VERIFY (tuple status) 1234").is_err());
    }

    #[test]
    fn gpo_visa_roundtrip() {
        let gen = AtomGen::new();
        let resp = Apdu::response(
            ApduName::GetProcessingOptions,
            ResponseBody::GpoVisa {
                aip: Aip::new(AuthProfile::Dda),
                afl: Term::atom("afl"),
                atc: 7,
                cid: AcKind::Arqc,
                ac: Term::mac(Term::atom("x"), Term::atom("s")),
                ctq: Ctq { byte1: 0x80, byte2: 0 },
                iad: gen.fresh("iad"),
                nc: Some(gen.fresh("nc")),
                sdad: None,
            },
            Trailer::SUCCESS,
        );
        assert_eq!(Apdu::decode(&resp.encode()).unwrap(), resp);
    }

    #[test]
    fn cvm_list_roundtrip_with_conditions() {
        let list = CvmList {
            entries: vec![
                CvmEntry { method: CvmKind::OnlinePin, condition: CvmCondition::AboveLimit },
                CvmEntry { method: CvmKind::NoPin, condition: CvmCondition::Always },
            ],
        };
        assert_eq!(CvmList::from_term(&list.to_term()), Some(list));
    }

    #[test]
    fn transaction_record_diff_names_fields() {
        let gen = AtomGen::new();
        let base = TransactionRecord {
            pan: gen.fresh("pan"),
            aip: Aip::new(AuthProfile::Cda),
            cvm: CvmKind::NoPin,
            ac_input: Term::atom("x"),
            atc: 1,
            ac: Term::atom("ac"),
            iad: Term::atom("iad"),
        };
        let mut other = base.clone();
        other.cvm = CvmKind::PlainPin;
        other.ac = Term::atom("ac2");
        assert_eq!(base.diff_fields(&other), vec!["cvm", "ac"]);
        assert!(base.diff_fields(&base).is_empty());
    }
}
