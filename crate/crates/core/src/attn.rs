//! Generic attention forward pass and the affine pre-maps the constructions
//! compile into. Forward passes are pure; temperature is applied inside the
//! softmax rather than baked into the score weights (see `numkit`).

use crate::error::{Error, Result};
use crate::numkit::{softmax_beta, Matrix};

/// Affine sequence map. The base term is `left * X`, optionally multiplied
/// entrywise by `scale` (the element-wise per-token reweighting used to give
/// every token its own linear model), optionally right-multiplied (sequence
/// padding / column mixing), plus `bias`. `extra` holds additional
/// `left * X * right` summands for maps that read several row blocks of the
/// input independently.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub left: Matrix,
    pub scale: Option<Matrix>,
    pub right: Option<Matrix>,
    pub bias: Matrix,
    pub extra: Vec<(Matrix, Matrix)>,
}

impl AffineMap {
    pub fn new(left: Matrix, bias: Matrix) -> Self {
        AffineMap {
            left,
            scale: None,
            right: None,
            bias,
            extra: Vec::new(),
        }
    }

    pub fn with_right(mut self, right: Matrix) -> Self {
        self.right = Some(right);
        self
    }

    pub fn with_scale(mut self, scale: Matrix) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn with_extra(mut self, left: Matrix, right: Matrix) -> Self {
        self.extra.push((left, right));
        self
    }

    /// Pure linear map `left * X`.
    pub fn linear(left: Matrix) -> Self {
        let rows = left.rows();
        AffineMap::new(left, Matrix::zeros(rows, 1)).with_bias_broadcast()
    }

    fn with_bias_broadcast(mut self) -> Self {
        // zero 1-column bias marks "broadcast zero"; apply() expands it.
        self.bias = Matrix::zeros(self.left.rows(), 1);
        self
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.left.matmul(x)?;
        if let Some(s) = &self.scale {
            y = y.hadamard(s)?;
        }
        if let Some(r) = &self.right {
            y = y.matmul(r)?;
        }
        let mut y = if self.bias.rows() == y.rows() && self.bias.cols() == y.cols() {
            y.add(&self.bias)?
        } else if self.bias.cols() == 1 && self.bias.max_abs() == 0.0 {
            y
        } else {
            return Err(Error::DimensionMismatch(format!(
                "bias {}x{} against output {}x{}",
                self.bias.rows(),
                self.bias.cols(),
                y.rows(),
                y.cols()
            )));
        };
        for (l, r) in &self.extra {
            y = y.add(&l.matmul(x)?.matmul(r)?)?;
        }
        Ok(y)
    }

    /// Precomposes with a plain linear map: afterwards apply(X) equals the
    /// old apply(M * X). Used to feed a construction a selected row block of
    /// a larger carrier matrix.
    pub fn compose_inner_left(&mut self, m: &Matrix) -> Result<()> {
        self.left = self.left.matmul(m)?;
        for (l, _) in &mut self.extra {
            *l = l.matmul(m)?;
        }
        Ok(())
    }
}

/// One attention head: out = (W_V Z) softmax_beta((W_K Z)^T (W_Q Z)) W_O,
/// with Z the head input after the optional per-head pre-map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub pre: Option<AffineMap>,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub beta: f64,
}

impl AttentionHead {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, w_o: Matrix, beta: f64) -> Self {
        AttentionHead {
            pre: None,
            w_q,
            w_k,
            w_v,
            w_o,
            beta,
        }
    }

    pub fn with_pre(mut self, pre: AffineMap) -> Self {
        self.pre = Some(pre);
        self
    }

    /// Raw (un-tempered) score matrix (W_K Z)^T (W_Q Z).
    pub fn scores(&self, z: &Matrix) -> Result<Matrix> {
        let z_owned;
        let z = match &self.pre {
            Some(pre) => {
                z_owned = pre.apply(z)?;
                &z_owned
            }
            None => z,
        };
        let k = self.w_k.matmul(z)?;
        let q = self.w_q.matmul(z)?;
        k.transpose().matmul(&q)
    }
}

pub fn forward_head(head: &AttentionHead, z: &Matrix) -> Result<Matrix> {
    let z_owned;
    let z = match &head.pre {
        Some(pre) => {
            z_owned = pre.apply(z)?;
            &z_owned
        }
        None => z,
    };
    let v = head.w_v.matmul(z)?;
    let k = head.w_k.matmul(z)?;
    let q = head.w_q.matmul(z)?;
    let s = softmax_beta(&k.transpose().matmul(&q)?, head.beta);
    v.matmul(&s)?.matmul(&head.w_o)
}

/// A stack: shared pre-map, summed heads, optional residual add of the stack
/// input, optional trailing column-wise tempered softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub pre: Option<AffineMap>,
    pub heads: Vec<AttentionHead>,
    /// Some(beta) applies a trailing column-wise softmax at that temperature.
    pub post_softmax: Option<f64>,
    /// Residual adds the stack input; head output shape must equal it.
    pub residual: bool,
}

impl AttentionStack {
    pub fn new(heads: Vec<AttentionHead>) -> Self {
        AttentionStack {
            pre: None,
            heads,
            post_softmax: None,
            residual: false,
        }
    }

    pub fn with_pre(mut self, pre: AffineMap) -> Self {
        self.pre = Some(pre);
        self
    }

    pub fn with_post_softmax(mut self, beta: f64) -> Self {
        self.post_softmax = Some(beta);
        self
    }

    pub fn with_residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let z_owned;
        let z = match &self.pre {
            Some(pre) => {
                z_owned = pre.apply(x)?;
                &z_owned
            }
            None => x,
        };
        let mut acc: Option<Matrix> = None;
        for head in &self.heads {
            let out = forward_head(head, z)?;
            acc = Some(match acc {
                None => out,
                Some(a) => a.add(&out)?,
            });
        }
        let mut acc = acc.ok_or_else(|| Error::InvalidArgument("stack has no heads".into()))?;
        if self.residual {
            acc = acc.add(x)?;
        }
        if let Some(beta) = self.post_softmax {
            acc = softmax_beta(&acc, beta);
        }
        Ok(acc)
    }
}

pub fn forward_stack(stack: &AttentionStack, x: &Matrix) -> Result<Matrix> {
    stack.forward(x)
}

// --- text serialization -----------------------------------------------------
//
// Self-describing, line-oriented, decimal only. Floats are written with
// Rust's shortest-round-trip formatting, so parse(write(stack)) is
// bit-identical. Grammar (one token stream, newlines insignificant):
//
//   attn-stack v1
//   residual <0|1>
//   post_softmax <none | beta value>
//   pre <none | affine ...>
//   heads <count>
//   { head pre <none|affine ...> beta <value>
//     matrix w_q <rows> <cols> <values...> ... w_k, w_v, w_o }
//
//   affine := affine left <matrix body> scale <none|matrix body>
//             right <none|matrix body> bias <matrix body>
//             extra <count> { <matrix body> <matrix body> }
//   matrix body := <rows> <cols> <rows*cols values row-major>

fn write_f64(out: &mut String, v: f64) {
    if v == f64::INFINITY {
        out.push_str(" inf");
    } else if v == f64::NEG_INFINITY {
        out.push_str(" -inf");
    } else {
        out.push_str(&format!(" {}", v));
    }
}

fn write_matrix_body(out: &mut String, m: &Matrix) {
    out.push_str(&format!("{} {}", m.rows(), m.cols()));
    for i in 0..m.rows() {
        out.push('\n');
        let mut first = true;
        for j in 0..m.cols() {
            if first {
                out.push_str(&format!("{}", m.get(i, j)));
                first = false;
            } else {
                write_f64(out, m.get(i, j));
            }
        }
    }
    out.push('\n');
}

fn write_affine(out: &mut String, a: &AffineMap) {
    out.push_str("affine\nleft ");
    write_matrix_body(out, &a.left);
    match &a.scale {
        None => out.push_str("scale none\n"),
        Some(s) => {
            out.push_str("scale ");
            write_matrix_body(out, s);
        }
    }
    match &a.right {
        None => out.push_str("right none\n"),
        Some(r) => {
            out.push_str("right ");
            write_matrix_body(out, r);
        }
    }
    out.push_str("bias ");
    write_matrix_body(out, &a.bias);
    out.push_str(&format!("extra {}\n", a.extra.len()));
    for (l, r) in &a.extra {
        write_matrix_body(out, l);
        write_matrix_body(out, r);
    }
}

impl AttentionStack {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("attn-stack v1\n");
        out.push_str(&format!("residual {}\n", if self.residual { 1 } else { 0 }));
        match self.post_softmax {
            None => out.push_str("post_softmax none\n"),
            Some(b) => out.push_str(&format!("post_softmax beta {}\n", b)),
        }
        match &self.pre {
            None => out.push_str("pre none\n"),
            Some(a) => {
                out.push_str("pre ");
                write_affine(&mut out, a);
            }
        }
        out.push_str(&format!("heads {}\n", self.heads.len()));
        for h in &self.heads {
            out.push_str("head\npre ");
            match &h.pre {
                None => out.push_str("none\n"),
                Some(a) => write_affine(&mut out, a),
            }
            out.push_str(&format!("beta {}\n", h.beta));
            for (name, m) in [
                ("w_q", &h.w_q),
                ("w_k", &h.w_k),
                ("w_v", &h.w_v),
                ("w_o", &h.w_o),
            ] {
                out.push_str(&format!("matrix {} ", name));
                write_matrix_body(&mut out, m);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut toks = Tokens::new(text);
        toks.expect("attn-stack")?;
        toks.expect("v1")?;
        toks.expect("residual")?;
        let residual = toks.next_u64()? == 1;
        toks.expect("post_softmax")?;
        let post_softmax = match toks.next()? {
            "none" => None,
            "beta" => Some(toks.next_f64()?),
            other => return Err(Error::Parse(format!("bad post_softmax tag {other}"))),
        };
        toks.expect("pre")?;
        let pre = read_optional_affine(&mut toks)?;
        toks.expect("heads")?;
        let count = toks.next_u64()? as usize;
        let mut heads = Vec::with_capacity(count);
        for _ in 0..count {
            toks.expect("head")?;
            toks.expect("pre")?;
            let hpre = read_optional_affine(&mut toks)?;
            toks.expect("beta")?;
            let beta = toks.next_f64()?;
            let mut mats = Vec::with_capacity(4);
            for name in ["w_q", "w_k", "w_v", "w_o"] {
                toks.expect("matrix")?;
                toks.expect(name)?;
                mats.push(read_matrix_body(&mut toks)?);
            }
            let w_o = mats.pop().unwrap();
            let w_v = mats.pop().unwrap();
            let w_k = mats.pop().unwrap();
            let w_q = mats.pop().unwrap();
            let mut head = AttentionHead::new(w_q, w_k, w_v, w_o, beta);
            head.pre = hpre;
            heads.push(head);
        }
        Ok(AttentionStack {
            pre,
            heads,
            post_softmax,
            residual,
        })
    }
}

struct Tokens<'a> {
    iter: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens {
            iter: text.split_whitespace(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| Error::Parse("unexpected end of stack text".into()))
    }

    fn expect(&mut self, tag: &str) -> Result<()> {
        let got = self.next()?;
        if got != tag {
            return Err(Error::Parse(format!("expected '{tag}', got '{got}'")));
        }
        Ok(())
    }

    fn next_u64(&mut self) -> Result<u64> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Parse(format!("bad integer '{t}'")))
    }

    fn next_f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        match t {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => t
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{t}'"))),
        }
    }
}

fn read_matrix_body(toks: &mut Tokens) -> Result<Matrix> {
    let rows = toks.next_u64()? as usize;
    let cols = toks.next_u64()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(toks.next_f64()?);
    }
    Matrix::from_vec(rows, cols, data)
}

fn read_optional_affine(toks: &mut Tokens) -> Result<Option<AffineMap>> {
    match toks.next()? {
        "none" => Ok(None),
        "affine" => {
            toks.expect("left")?;
            let left = read_matrix_body(toks)?;
            toks.expect("scale")?;
            let scale = read_optional_matrix(toks)?;
            toks.expect("right")?;
            let right = read_optional_matrix(toks)?;
            toks.expect("bias")?;
            let bias = read_matrix_body(toks)?;
            toks.expect("extra")?;
            let count = toks.next_u64()? as usize;
            let mut extra = Vec::with_capacity(count);
            for _ in 0..count {
                let l = read_matrix_body(toks)?;
                let r = read_matrix_body(toks)?;
                extra.push((l, r));
            }
            Ok(Some(AffineMap {
                left,
                scale,
                right,
                bias,
                extra,
            }))
        }
        other => Err(Error::Parse(format!("bad affine tag '{other}'"))),
    }
}

fn read_optional_matrix(toks: &mut Tokens) -> Result<Option<Matrix>> {
    // peek by reading the next token: either "none" or the row count
    let t = toks.next()?;
    if t == "none" {
        return Ok(None);
    }
    let rows: usize = t
        .parse()
        .map_err(|_| Error::Parse(format!("bad matrix rows '{t}'")))?;
    let cols = toks.next_u64()? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(toks.next_f64()?);
    }
    Ok(Some(Matrix::from_vec(rows, cols, data)?))
}
