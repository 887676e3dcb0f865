//! The target-configuration space: 24 contact and 16 contactless
//! configurations, with the applicability rules that mark eight of them
//! as not runnable.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::data::{AuthProfile, CvmKind, ValueClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Interface {
    Contact,
    Contactless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Kernel {
    Mastercard,
    Visa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Authz {
    Offline,
    Online,
}

/// Terminal-side protocol hardenings that can be switched on per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Fix {
    /// Always request a dynamic signature (first bit of TTQ byte 1).
    Fix1,
    /// Require and verify the dynamic signature.
    Fix2,
    /// Force online authorization (8th bit of TTQ byte 2).
    Fix3a,
    /// Extend the dynamic-signature input to bind the whole transaction.
    Fix3b,
}

impl Fix {
    pub fn parse(s: &str) -> Option<Fix> {
        Some(match s {
            "1" => Fix::Fix1,
            "2" => Fix::Fix2,
            "3a" => Fix::Fix3a,
            "3b" => Fix::Fix3b,
            _ => return None,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Fix::Fix1 => "1",
            Fix::Fix2 => "2",
            Fix::Fix3a => "3a",
            Fix::Fix3b => "3b",
        }
    }
}

pub type FixMask = BTreeSet<Fix>;

/// One cell of the configuration matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TargetConfig {
    pub interface: Interface,
    /// Contactless kernel; `None` for contact.
    pub kernel: Option<Kernel>,
    pub auth: AuthProfile,
    pub cvm: CvmKind,
    /// Contactless transaction value class; contact configs derive theirs
    /// from the authorization type.
    pub value: Option<ValueClass>,
    /// Contact authorization type; contactless configs derive theirs from
    /// the value class and kernel.
    pub authz: Option<Authz>,
    pub fixes: FixMask,
}

impl TargetConfig {
    pub fn contact(auth: AuthProfile, cvm: CvmKind, authz: Authz) -> TargetConfig {
        TargetConfig {
            interface: Interface::Contact,
            kernel: None,
            auth,
            cvm,
            value: None,
            authz: Some(authz),
            fixes: FixMask::new(),
        }
    }

    pub fn contactless(kernel: Kernel, auth: AuthProfile, cvm: CvmKind, value: ValueClass) -> TargetConfig {
        TargetConfig {
            interface: Interface::Contactless,
            kernel: Some(kernel),
            auth,
            cvm,
            value: Some(value),
            authz: None,
            fixes: FixMask::new(),
        }
    }

    pub fn with_fixes(mut self, fixes: FixMask) -> TargetConfig {
        self.fixes = fixes;
        self
    }

    pub fn name(&self) -> String {
        match self.interface {
            Interface::Contact => format!(
                "Contact_{}_{}_{}",
                auth_name(self.auth),
                cvm_name(self.cvm),
                match self.authz.expect("contact config has an authz") {
                    Authz::Online => "Online",
                    Authz::Offline => "Offline",
                }
            ),
            Interface::Contactless => {
                let kernel = self.kernel.expect("contactless config has a kernel");
                let value = match self.value.expect("contactless config has a value") {
                    ValueClass::Low => "Low",
                    ValueClass::High => "High",
                };
                match kernel {
                    Kernel::Visa => format!("Visa_{}_{}", auth_name(self.auth), value),
                    Kernel::Mastercard => format!(
                        "Mastercard_{}_{}_{}",
                        auth_name(self.auth),
                        cvm_name(self.cvm),
                        value
                    ),
                }
            }
        }
    }

    /// The effective transaction value class. Contact configurations pin it
    /// to the authorization type: offline approvals sit under the ceiling
    /// limit, online ones above it.
    pub fn value_class(&self) -> ValueClass {
        match self.interface {
            Interface::Contactless => self.value.unwrap(),
            Interface::Contact => match self.authz.unwrap() {
                Authz::Offline => ValueClass::Low,
                Authz::Online => ValueClass::High,
            },
        }
    }

    pub fn has_fix(&self, f: Fix) -> bool {
        self.fixes.contains(&f)
    }
}

impl fmt::Display for TargetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

fn auth_name(a: AuthProfile) -> &'static str {
    match a {
        AuthProfile::Sda => "SDA",
        AuthProfile::Dda => "DDA",
        AuthProfile::Cda => "CDA",
        AuthProfile::EmvMode => "EMV",
    }
}

fn cvm_name(c: CvmKind) -> &'static str {
    match c {
        CvmKind::NoPin => "NoPIN",
        CvmKind::PlainPin => "PlainPIN",
        CvmKind::EncPin => "EncPIN",
        CvmKind::OnlinePin => "OnlinePIN",
        CvmKind::Cdcvm => "CDCVM",
        CvmKind::Signature => "Signature",
    }
}

/// All 40 target configurations in table order: 24 contact rows followed by
/// 16 contactless rows (Visa first, then Mastercard).
pub fn enumerate() -> Vec<TargetConfig> {
    let mut out = Vec::with_capacity(40);
    for auth in [AuthProfile::Sda, AuthProfile::Dda, AuthProfile::Cda] {
        for cvm in [CvmKind::PlainPin, CvmKind::OnlinePin, CvmKind::NoPin, CvmKind::EncPin] {
            for authz in [Authz::Online, Authz::Offline] {
                out.push(TargetConfig::contact(auth, cvm, authz));
            }
        }
    }
    for auth in [AuthProfile::EmvMode, AuthProfile::Dda] {
        for value in [ValueClass::Low, ValueClass::High] {
            out.push(TargetConfig::contactless(Kernel::Visa, auth, CvmKind::OnlinePin, value));
        }
    }
    for auth in [AuthProfile::Sda, AuthProfile::Dda, AuthProfile::Cda] {
        for cvm in [CvmKind::OnlinePin, CvmKind::NoPin] {
            for value in [ValueClass::Low, ValueClass::High] {
                out.push(TargetConfig::contactless(Kernel::Mastercard, auth, cvm, value));
            }
        }
    }
    out
}

/// Look up a configuration by its table name.
pub fn by_name(name: &str) -> Option<TargetConfig> {
    enumerate().into_iter().find(|c| c.name() == name)
}

/// Why a configuration cannot run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NotApplicable {
    /// Online PIN sends the PIN to the issuer, so the transaction must be
    /// authorized online.
    OnlinePinNeedsOnlineAuthz,
    /// Enciphered PIN encrypts to the card's public key, which a
    /// static-authentication card does not have.
    EncPinNeedsCardKeyPair,
    /// High-value contactless transactions without cardholder verification
    /// are not completed; remark (3) in the results tables.
    NoCvmHighValue,
}

impl NotApplicable {
    pub fn reason(self) -> &'static str {
        match self {
            NotApplicable::OnlinePinNeedsOnlineAuthz => {
                "online PIN requires online authorization"
            }
            NotApplicable::EncPinNeedsCardKeyPair => {
                "enciphered PIN requires a card key pair, absent under SDA"
            }
            NotApplicable::NoCvmHighValue => {
                "high-value contactless transactions without CVM are not completed"
            }
        }
    }

    /// Remark code shown in the results table, if any.
    pub fn remark(self) -> Option<u8> {
        match self {
            NotApplicable::NoCvmHighValue => Some(3),
            _ => None,
        }
    }
}

pub fn applicability(c: &TargetConfig) -> Result<(), NotApplicable> {
    match c.interface {
        Interface::Contact => {
            if c.cvm == CvmKind::OnlinePin && c.authz == Some(Authz::Offline) {
                return Err(NotApplicable::OnlinePinNeedsOnlineAuthz);
            }
            if c.cvm == CvmKind::EncPin && c.auth == AuthProfile::Sda {
                return Err(NotApplicable::EncPinNeedsCardKeyPair);
            }
        }
        Interface::Contactless => {
            if c.kernel == Some(Kernel::Mastercard)
                && c.cvm == CvmKind::NoPin
                && c.value == Some(ValueClass::High)
            {
                return Err(NotApplicable::NoCvmHighValue);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_configurations() {
        assert_eq!(enumerate().len(), 40);
    }

    #[test]
    fn names_are_unique_and_contain_known_rows() {
        let names: Vec<String> = enumerate().iter().map(|c| c.name()).collect();
        let unique: std::collections::HashSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), 40);
        assert!(names.contains(&"Contact_CDA_OnlinePIN_Online".to_string()));
        assert!(names.contains(&"Visa_DDA_High".to_string()));
        assert!(names.contains(&"Mastercard_SDA_NoPIN_Low".to_string()));
    }

    #[test]
    fn eight_rows_are_not_applicable_in_two_classes() {
        let mut onlinepin_or_encpin = 0;
        let mut no_cvm_high = 0;
        for c in enumerate() {
            match applicability(&c) {
                Ok(()) => {}
                Err(NotApplicable::NoCvmHighValue) => no_cvm_high += 1,
                Err(_) => onlinepin_or_encpin += 1,
            }
        }
        assert_eq!(onlinepin_or_encpin, 5);
        assert_eq!(no_cvm_high, 3);
    }

    #[test]
    fn expected_na_rows() {
        for name in [
            "Contact_SDA_OnlinePIN_Offline",
            "Contact_SDA_EncPIN_Online",
            "Contact_SDA_EncPIN_Offline",
            "Contact_DDA_OnlinePIN_Offline",
            "Contact_CDA_OnlinePIN_Offline",
            "Mastercard_SDA_NoPIN_High",
            "Mastercard_DDA_NoPIN_High",
            "Mastercard_CDA_NoPIN_High",
        ] {
            let c = by_name(name).unwrap();
            assert!(applicability(&c).is_err(), "{name} should be inapplicable");
        }
        assert!(applicability(&by_name("Visa_EMV_Low").unwrap()).is_ok());
    }
}
