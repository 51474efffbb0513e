//! Paillier cryptosystem with `g = n + 1` and fixed-point plaintexts.
//!
//! Plaintexts are signed integers mapped into `Z_n` (negatives as `n − |m|`)
//! and carry a binary scale: a ciphertext at scale `s` encrypts `round(x·2^s)`.
//! Multiplying by a plaintext scalar encoded at `f` bits adds `f` to the
//! scale; decryption divides by `2^s`. Each ciphertext also tracks a bound
//! on `log2 |m|` so accumulations that could wrap around `n/2` fail loudly
//! instead of decrypting to garbage.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_FRAC_BITS: u32 = 32;

/// Odd primes below 2000 for trial division.
fn small_primes() -> &'static [u32] {
    use std::sync::OnceLock;
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let mut sieve = vec![true; 2000];
        let mut out = Vec::new();
        for i in 2..2000 {
            if sieve[i] {
                if i > 2 {
                    out.push(i as u32);
                }
                let mut j = i * i;
                while j < 2000 {
                    sieve[j] = false;
                    j += i;
                }
            }
        }
        out
    })
}

/// Uniform integer in `[0, bound)`.
pub fn random_below<R: RngCore + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    assert!(!bound.is_zero());
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = (bytes as u64 * 8 - bits) as u32;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xff >> excess;
        let v = BigUint::from_bytes_be(&buf);
        if &v < bound {
            return v;
        }
    }
}

pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u8);
    if n < &two {
        return false;
    }
    for &p in small_primes() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }
    let n_minus_1 = n - 1u8;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let range = n - 3u8;
    'witness: for _ in 0..rounds {
        let a = random_below(&range, rng) + 2u8;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn random_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        let mut c = BigUint::from_bytes_be(&buf);
        c >>= bytes as u64 * 8 - bits;
        // top two bits set so p·q has exactly 2·bits bits; odd
        c.set_bit(bits - 1, true);
        c.set_bit(bits - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, 40, rng) {
            return c;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PublicKeyRaw", into = "PublicKeyRaw")]
pub struct PublicKey {
    pub n: BigUint,
    n2: BigUint,
    half_n: BigUint,
}

#[derive(Serialize, Deserialize)]
struct PublicKeyRaw {
    #[serde(with = "hex_biguint")]
    n: BigUint,
}

impl From<PublicKeyRaw> for PublicKey {
    fn from(r: PublicKeyRaw) -> Self {
        PublicKey::from_n(r.n)
    }
}

impl From<PublicKey> for PublicKeyRaw {
    fn from(k: PublicKey) -> Self {
        PublicKeyRaw { n: k.n }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretKey {
    #[serde(with = "hex_biguint")]
    pub p: BigUint,
    #[serde(with = "hex_biguint")]
    pub q: BigUint,
}

/// CRT material derived from the secret primes.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Crt {
    p2: BigUint,
    q2: BigUint,
    p_minus_1: BigUint,
    q_minus_1: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
    // exponent n reduced mod the group orders of Z*_{p²}, Z*_{q²}
    n_mod_phi_p2: BigUint,
    n_mod_phi_q2: BigUint,
    q2_inv_p2: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
    crt: Crt,
}

impl PublicKey {
    pub fn from_n(n: BigUint) -> Self {
        PublicKey {
            n2: &n * &n,
            half_n: &n >> 1,
            n,
        }
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n2
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Fixed wire width of a ciphertext in bytes.
    pub fn cipher_bytes(&self) -> usize {
        self.n2.bits().div_ceil(8) as usize
    }

    /// Largest safe `log2 |m|`.
    fn capacity_log2(&self) -> f64 {
        (self.n.bits() - 2) as f64
    }

    /// Maps a signed integer into `Z_n`.
    pub fn to_residue(&self, m: &BigInt) -> BigUint {
        let r = m.mod_floor(&BigInt::from(self.n.clone()));
        r.to_biguint().expect("mod_floor is non-negative")
    }

    pub fn from_residue(&self, m: &BigUint) -> BigInt {
        if m > &self.half_n {
            BigInt::from(m.clone()) - BigInt::from(self.n.clone())
        } else {
            BigInt::from(m.clone())
        }
    }

    fn random_unit<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = random_below(&self.n, rng);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// Raw encryption of a residue without the secret key.
    pub fn encrypt_residue<R: RngCore + ?Sized>(&self, m: &BigUint, rng: &mut R) -> BigUint {
        let r = self.random_unit(rng);
        let rn = r.modpow(&self.n, &self.n2);
        // (1 + n)^m = 1 + m·n mod n²
        let gm = (BigUint::one() + m * &self.n) % &self.n2;
        (gm * rn) % &self.n2
    }
}

impl KeyPair {
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self> {
        if p == q {
            return Err(Error::Config("paillier primes must differ".into()));
        }
        let n = &p * &q;
        let public = PublicKey::from_n(n.clone());
        let p2 = &p * &p;
        let q2 = &q * &q;
        let p_minus_1 = &p - 1u8;
        let q_minus_1 = &q - 1u8;
        let g = &n + 1u8;
        let lp = (g.modpow(&p_minus_1, &p2) - 1u8) / &p;
        let lq = (g.modpow(&q_minus_1, &q2) - 1u8) / &q;
        let hp = lp
            .modinv(&p)
            .ok_or_else(|| Error::Config("degenerate paillier prime p".into()))?;
        let hq = lq
            .modinv(&q)
            .ok_or_else(|| Error::Config("degenerate paillier prime q".into()))?;
        let q_inv_p = (&q % &p)
            .modinv(&p)
            .ok_or_else(|| Error::Config("primes not coprime".into()))?;
        let q2_inv_p2 = (&q2 % &p2)
            .modinv(&p2)
            .ok_or_else(|| Error::Config("primes not coprime".into()))?;
        let crt = Crt {
            n_mod_phi_p2: &n % (&p * &p_minus_1),
            n_mod_phi_q2: &n % (&q * &q_minus_1),
            p2,
            q2,
            p_minus_1,
            q_minus_1,
            hp,
            hq,
            q_inv_p,
            q2_inv_p2,
        };
        Ok(KeyPair {
            public,
            secret: SecretKey { p, q },
            crt,
        })
    }

    /// Deterministic under `seed`.
    pub fn generate(bits: u64, seed: u64) -> Result<Self> {
        if bits < 64 || bits % 2 != 0 {
            return Err(Error::Config(format!("key size {bits} must be even and at least 64")));
        }
        let mut rng = rng::stream(seed, "paillier-keygen", bits);
        loop {
            let p = random_prime(bits / 2, &mut rng);
            let q = random_prime(bits / 2, &mut rng);
            if p != q {
                return Self::from_primes(p, q);
            }
        }
    }

    /// Encryption using CRT for `r^n mod n²`.
    pub fn encrypt_residue<R: RngCore + ?Sized>(&self, m: &BigUint, rng: &mut R) -> BigUint {
        let pk = &self.public;
        let r = pk.random_unit(rng);
        let c = &self.crt;
        let a = (&r % &c.p2).modpow(&c.n_mod_phi_p2, &c.p2);
        let b = (&r % &c.q2).modpow(&c.n_mod_phi_q2, &c.q2);
        // combine a mod p², b mod q²
        let diff = (&a + &c.p2 - (&b % &c.p2)) % &c.p2;
        let rn = &b + &c.q2 * ((diff * &c.q2_inv_p2) % &c.p2);
        let gm = (BigUint::one() + m * &pk.n) % &pk.n2;
        (gm * rn) % &pk.n2
    }

    pub fn decrypt_residue(&self, ct: &BigUint) -> BigUint {
        let c = &self.crt;
        let (p, q) = (&self.secret.p, &self.secret.q);
        let xp = (ct % &c.p2).modpow(&c.p_minus_1, &c.p2);
        let mp = (((xp - 1u8) / p) * &c.hp) % p;
        let xq = (ct % &c.q2).modpow(&c.q_minus_1, &c.q2);
        let mq = (((xq - 1u8) / q) * &c.hq) % q;
        let diff = (&mp + p - (&mq % p)) % p;
        &mq + q * ((diff * &c.q_inv_p) % p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "format": "ppmarl-paillier",
            "version": 1,
            "public": self.public,
            "secret": self.secret,
        }))
        .expect("key serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            format: String,
            version: u32,
            secret: SecretKey,
        }
        let f: File = serde_json::from_str(text)?;
        if f.format != "ppmarl-paillier" || f.version != 1 {
            return Err(Error::Data(format!("unsupported key file {} v{}", f.format, f.version)));
        }
        Self::from_primes(f.secret.p, f.secret.q)
    }
}

mod hex_biguint {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| serde::de::Error::custom("bad hex integer"))
    }
}


/// `round(x · 2^bits)` computed exactly from the binary expansion of `x`.
pub fn encode_fixed(x: f64, bits: u32) -> Result<BigInt> {
    if !x.is_finite() {
        return Err(Error::Overflow(format!("cannot encode non-finite value {x}")));
    }
    if x == 0.0 {
        return Ok(BigInt::zero());
    }
    let raw = x.abs().to_bits();
    let exp_bits = ((raw >> 52) & 0x7ff) as i64;
    let frac = raw & ((1u64 << 52) - 1);
    let (mant, exp) = if exp_bits == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let shift = exp + bits as i64;
    let mag = if shift >= 0 {
        BigUint::from(mant) << shift as u64
    } else {
        let s = (-shift) as u64;
        if s > 64 {
            BigUint::zero()
        } else {
            // round half away from zero
            let m = BigUint::from(mant);
            let half = BigUint::one() << (s - 1);
            (m + half) >> s
        }
    };
    let sign = if x < 0.0 { Sign::Minus } else { Sign::Plus };
    Ok(BigInt::from_biguint(sign, mag))
}

pub fn decode_fixed(m: &BigInt, bits: u32) -> f64 {
    let v = m.to_f64().unwrap_or(f64::NAN);
    v * (-(bits as f64)).exp2()
}

fn log2_abs(m: &BigInt) -> f64 {
    if m.is_zero() {
        f64::NEG_INFINITY
    } else {
        let b = m.bits();
        if b <= 1000 {
            m.magnitude().to_f64().unwrap().log2()
        } else {
            b as f64
        }
    }
}

fn log2_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (1.0 + (lo - hi).exp2()).log2()
}

/// Encrypted fixed-point number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub c: BigUint,
    /// Fraction bits of the encrypted integer.
    pub scale: u32,
    /// Upper bound on `log2 |m|`; metadata the protocol can recompute, never sent.
    bound: OrdF64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}

/// Homomorphic-operation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeOps {
    pub encryptions: u64,
    pub decryptions: u64,
    pub additions: u64,
    pub scalings: u64,
}

impl HeOps {
    pub fn add(&mut self, o: &HeOps) {
        self.encryptions += o.encryptions;
        self.decryptions += o.decryptions;
        self.additions += o.additions;
        self.scalings += o.scalings;
    }

    pub fn total(&self) -> u64 {
        self.encryptions + self.decryptions + self.additions + self.scalings
    }
}

impl Ciphertext {
    /// Rebuilds a ciphertext received off the wire; the scale is implied by
    /// the protocol step, the bound is assumed to be the worst safe value.
    pub fn from_wire(c: BigUint, scale: u32, bound_log2: f64) -> Self {
        Ciphertext {
            c,
            scale,
            bound: OrdF64(bound_log2),
        }
    }

    pub fn bound_log2(&self) -> f64 {
        self.bound.0
    }
}

impl PublicKey {
    fn check_bound(&self, bound: f64, what: &str) -> Result<()> {
        if bound > self.capacity_log2() {
            return Err(Error::Overflow(format!(
                "{what}: plaintext bound 2^{bound:.1} exceeds message space 2^{}",
                self.capacity_log2()
            )));
        }
        Ok(())
    }

    pub fn encrypt<R: RngCore + ?Sized>(&self, x: f64, scale: u32, rng: &mut R, ops: &mut HeOps) -> Result<Ciphertext> {
        let m = encode_fixed(x, scale)?;
        let bound = log2_abs(&m);
        self.check_bound(bound, "encrypt")?;
        ops.encryptions += 1;
        Ok(Ciphertext {
            c: self.encrypt_residue(&self.to_residue(&m), rng),
            scale,
            bound: OrdF64(bound),
        })
    }

    /// Deterministic encryption of a public constant (randomness 1).
    pub fn encrypt_public(&self, x: f64, scale: u32) -> Result<Ciphertext> {
        let m = encode_fixed(x, scale)?;
        let bound = log2_abs(&m);
        self.check_bound(bound, "encrypt")?;
        let r = self.to_residue(&m);
        Ok(Ciphertext {
            c: (BigUint::one() + r * &self.n) % &self.n2,
            scale,
            bound: OrdF64(bound),
        })
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext, ops: &mut HeOps) -> Result<Ciphertext> {
        if a.scale != b.scale {
            return Err(Error::Usage(format!(
                "cannot add ciphertexts at scales {} and {}",
                a.scale, b.scale
            )));
        }
        let bound = log2_add(a.bound.0, b.bound.0);
        self.check_bound(bound, "he_add")?;
        ops.additions += 1;
        Ok(Ciphertext {
            c: (&a.c * &b.c) % &self.n2,
            scale: a.scale,
            bound: OrdF64(bound),
        })
    }

    /// Multiplies by a plaintext scalar encoded at `frac_bits`.
    pub fn scale(&self, k: f64, frac_bits: u32, a: &Ciphertext, ops: &mut HeOps) -> Result<Ciphertext> {
        let km = encode_fixed(k, frac_bits)?;
        self.scale_int(&km, frac_bits, a, ops)
    }

    /// Multiplies by an integer that represents a value at `frac_bits`.
    pub fn scale_int(&self, k: &BigInt, frac_bits: u32, a: &Ciphertext, ops: &mut HeOps) -> Result<Ciphertext> {
        let bound = a.bound.0 + log2_abs(k);
        let bound = if bound.is_nan() { f64::NEG_INFINITY } else { bound };
        self.check_bound(bound, "he_scale")?;
        ops.scalings += 1;
        let mag = k.magnitude();
        let mut c = a.c.modpow(mag, &self.n2);
        if k.sign() == Sign::Minus {
            c = c
                .modinv(&self.n2)
                .ok_or_else(|| Error::Usage("ciphertext not invertible mod n²".into()))?;
        }
        Ok(Ciphertext {
            c,
            scale: a.scale + frac_bits,
            bound: OrdF64(bound),
        })
    }

    /// Adds a public plaintext value at the ciphertext's own scale.
    pub fn add_plain(&self, a: &Ciphertext, x: f64, ops: &mut HeOps) -> Result<Ciphertext> {
        let b = self.encrypt_public(x, a.scale)?;
        self.add(a, &b, ops)
    }

    /// Multiplies by `2^bits` (raises the scale without changing the value).
    pub fn rescale_up(&self, a: &Ciphertext, bits: u32, ops: &mut HeOps) -> Result<Ciphertext> {
        self.scale_int(&(BigInt::one() << bits), bits, a, ops)
    }
}

impl KeyPair {
    pub fn encrypt<R: RngCore + ?Sized>(&self, x: f64, scale: u32, rng: &mut R, ops: &mut HeOps) -> Result<Ciphertext> {
        let m = encode_fixed(x, scale)?;
        let bound = log2_abs(&m);
        self.public.check_bound(bound, "encrypt")?;
        ops.encryptions += 1;
        Ok(Ciphertext {
            c: self.encrypt_residue(&self.public.to_residue(&m), rng),
            scale,
            bound: OrdF64(bound),
        })
    }

    pub fn decrypt(&self, ct: &Ciphertext, ops: &mut HeOps) -> f64 {
        ops.decryptions += 1;
        let m = self.public.from_residue(&self.decrypt_residue(&ct.c));
        decode_fixed(&m, ct.scale)
    }
}

/// Fresh randomness for encryption on the caller's stream.
pub fn encryption_rng(seed: u64, index: u64) -> rng::Stream {
    rng::stream(seed, "paillier-encrypt", index)
}

/// Used by tests to draw plaintexts.
pub fn random_value<R: Rng + ?Sized>(rng: &mut R, range: f64) -> f64 {
    rng.random_range(-range..range)
}
