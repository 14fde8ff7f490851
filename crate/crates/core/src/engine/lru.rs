/// Doubly linked recency list over dense `u32` ids.
///
/// Link storage grows with the largest id seen. Head is most recently used.
#[derive(Debug, Default, Clone)]
pub(crate) struct LruList {
    prev: Vec<u32>,
    next: Vec<u32>,
    linked: Vec<bool>,
    head: u32,
    tail: u32,
    len: usize,
}

const NIL: u32 = u32::MAX;

impl LruList {
    pub fn new() -> Self {
        LruList { head: NIL, tail: NIL, ..Default::default() }
    }

    fn reserve(&mut self, id: u32) {
        let need = id as usize + 1;
        if self.prev.len() < need {
            self.prev.resize(need, NIL);
            self.next.resize(need, NIL);
            self.linked.resize(need, false);
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn contains(&self, id: u32) -> bool {
        self.linked.get(id as usize).copied().unwrap_or(false)
    }

    pub fn head(&self) -> Option<u32> {
        (self.head != NIL).then_some(self.head)
    }

    pub fn tail(&self) -> Option<u32> {
        (self.tail != NIL).then_some(self.tail)
    }

    pub fn push_front(&mut self, id: u32) {
        self.reserve(id);
        debug_assert!(!self.linked[id as usize]);
        let i = id as usize;
        self.prev[i] = NIL;
        self.next[i] = self.head;
        if self.head != NIL {
            self.prev[self.head as usize] = id;
        } else {
            self.tail = id;
        }
        self.head = id;
        self.linked[i] = true;
        self.len += 1;
    }

    pub fn remove(&mut self, id: u32) {
        debug_assert!(self.contains(id));
        let i = id as usize;
        let (p, n) = (self.prev[i], self.next[i]);
        if p != NIL {
            self.next[p as usize] = n;
        } else {
            self.head = n;
        }
        if n != NIL {
            self.prev[n as usize] = p;
        } else {
            self.tail = p;
        }
        self.prev[i] = NIL;
        self.next[i] = NIL;
        self.linked[i] = false;
        self.len -= 1;
    }

    /// Links `id` at the head, unlinking it first if present.
    pub fn promote(&mut self, id: u32) {
        if self.head == id {
            return;
        }
        if self.contains(id) {
            self.remove(id);
        }
        self.push_front(id);
    }

    /// Ids from head to tail.
    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        let mut at = self.head;
        std::iter::from_fn(move || {
            if at == NIL {
                return None;
            }
            let cur = at;
            at = self.next[cur as usize];
            Some(cur)
        })
    }
}
